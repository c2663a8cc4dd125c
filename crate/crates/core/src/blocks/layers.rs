use mostnet_autograd::{init, BatchNormParams, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

/// How a layer's weights start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    FanIn,
    Zero,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let shape = [out_channels, in_channels, kernel, kernel];
        let w = match init {
            Init::FanIn => init::fan_in_uniform(&shape, fan_in, rng),
            Init::Zero => Tensor::zeros(&shape),
        };
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            let b = match init {
                Init::FanIn => init::fan_in_uniform(&[out_channels], fan_in, rng),
                Init::Zero => Tensor::zeros(&[out_channels]),
            };
            store.add(format!("{name}.bias"), b)
        });
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Stride-2 transposed convolution doubling the spatial size (kernel 4, pad 1).
#[derive(Clone, Debug)]
pub struct Upsample {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Upsample {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = out_channels * 16;
        let weight = store.add(
            format!("{name}.weight"),
            init::fan_in_uniform(&[in_channels, out_channels, 4, 4], fan_in, rng),
        );
        let bias = store.add(
            format!("{name}.bias"),
            init::fan_in_uniform(&[out_channels], fan_in, rng),
        );
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose2d(x, w, Some(b), 2, 1)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let (w, b) = match init {
            Init::FanIn => (
                init::fan_in_uniform(&[out_features, in_features], in_features, rng),
                init::fan_in_uniform(&[out_features], in_features, rng),
            ),
            Init::Zero => (
                Tensor::zeros(&[out_features, in_features]),
                Tensor::zeros(&[out_features]),
            ),
        };
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

pub fn batch_norm<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> BatchNormParams {
    BatchNormParams {
        gamma: store.add(format!("{name}.weight"), Tensor::ones(&[channels])),
        beta: store.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
        running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
        running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
        momentum: 0.1,
        eps: 1e-5,
    }
}
