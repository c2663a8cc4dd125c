//! Network building blocks shared by the encoders, decoders and task heads.

mod cascade;
mod layers;

pub use cascade::corner_cascade;
pub use layers::{batch_norm, Conv2d, Init, Linear, Upsample};

use mostnet_autograd::{BatchNormParams, Graph, ParamStore, Scalar, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Channel layout of an encoder stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub n_res_blocks: usize,
    pub use_fft_branch: bool,
}

/// Residual block with a spatial branch and an optional frequency-domain branch.
#[derive(Clone, Debug)]
pub struct FftResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    freq: Option<(Conv2d, Conv2d)>,
}

impl FftResBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        use_fft: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, true, init, rng);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, true, init, rng);
        let freq = use_fft.then(|| {
            let c2 = 2 * channels;
            (
                Conv2d::new(store, &format!("{name}.freq1"), c2, c2, 1, 1, true, init, rng),
                Conv2d::new(store, &format!("{name}.freq2"), c2, c2, 1, 1, true, init, rng),
            )
        });
        Self { conv1, conv2, freq }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let h = self.conv1.forward(g, store, x);
        let h = g.relu(h);
        let spatial = self.conv2.forward(g, store, h);
        match &self.freq {
            Some((f1, f2)) => {
                let w = g.shape(x)[3];
                let z = g.rfft2(x);
                let z = f1.forward(g, store, z);
                let z = g.relu(z);
                let z = f2.forward(g, store, z);
                let fourier = g.irfft2(z, w);
                g.add_n(&[x, spatial, fourier])
            }
            None => g.add(x, spatial),
        }
    }

    /// The frequency branch's input to its nonlinearity, for inspection.
    pub fn fourier_preactivation<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Option<Var> {
        self.freq.as_ref().map(|(f1, _)| {
            let z = g.rfft2(x);
            f1.forward(g, store, z)
        })
    }
}

/// Plain residual block `x -> skip(x) + conv(relu(conv(x)))`, with a 1x1
/// projection on the skip path when the width changes.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    proj: Option<Conv2d>,
}

impl ResBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), in_channels, out_channels, 3, 1, true, Init::FanIn, rng);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), out_channels, out_channels, 3, 1, true, Init::FanIn, rng);
        let proj = (in_channels != out_channels).then(|| {
            Conv2d::new(store, &format!("{name}.proj"), in_channels, out_channels, 1, 1, false, Init::FanIn, rng)
        });
        Self { conv1, conv2, proj }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let h = self.conv1.forward(g, store, x);
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h);
        let skip = match &self.proj {
            Some(p) => p.forward(g, store, x),
            None => x,
        };
        g.add(skip, h)
    }
}

/// Strided 3x3 convolution, ReLU, then a stack of residual blocks.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    conv: Conv2d,
    blocks: Vec<FftResBlock>,
}

impl EncoderStage {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: BlockConfig,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let conv = Conv2d::new(store, &format!("{name}.conv"), cfg.in_channels, cfg.out_channels, 3, stride, true, Init::FanIn, rng);
        let blocks = (0..cfg.n_res_blocks)
            .map(|i| {
                FftResBlock::new(
                    store,
                    &format!("{name}.res{i}"),
                    cfg.out_channels,
                    cfg.use_fft_branch,
                    Init::FanIn,
                    rng,
                )
            })
            .collect();
        Self { conv, blocks }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let h = self.conv.forward(g, store, x);
        let mut h = g.relu(h);
        for b in &self.blocks {
            h = b.forward(g, store, h);
        }
        h
    }
}

/// Squeeze-excitation over the concatenation of current and aligned previous
/// features, followed by a 3x3 projection back to the input width.
#[derive(Clone, Debug)]
pub struct ChannelAttentionFuse {
    fc1: Conv2d,
    fc2: Conv2d,
    proj: Conv2d,
}

impl ChannelAttentionFuse {
    pub const REDUCTION: usize = 4;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let c2 = 2 * channels;
        let mid = (c2 / Self::REDUCTION).max(1);
        Self {
            fc1: Conv2d::new(store, &format!("{name}.fc1"), c2, mid, 1, 1, true, Init::FanIn, rng),
            fc2: Conv2d::new(store, &format!("{name}.fc2"), mid, c2, 1, 1, true, Init::FanIn, rng),
            proj: Conv2d::new(store, &format!("{name}.proj"), c2, channels, 3, 1, true, Init::FanIn, rng),
        }
    }

    /// Returns the fused features and the per-channel gates `[N, 2C, 1, 1]`.
    pub fn forward_with_gates<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        f_t: Var,
        f_prev: Var,
    ) -> Result<(Var, Var)> {
        let (a, b) = (g.shape(f_t), g.shape(f_prev));
        if a != b {
            return Err(Error::ShapeMismatch(format!("channel attention inputs {a:?} vs {b:?}")));
        }
        let cat = g.concat_channels(&[f_t, f_prev]);
        let s = g.global_avg_pool(cat);
        let s = self.fc1.forward(g, store, s);
        let s = g.relu(s);
        let s = self.fc2.forward(g, store, s);
        let gates = g.sigmoid(s);
        let gated = g.mul_broadcast(cat, gates);
        Ok((self.proj.forward(g, store, gated), gates))
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, f_t: Var, f_prev: Var) -> Result<Var> {
        self.forward_with_gates(g, store, f_t, f_prev).map(|(y, _)| y)
    }
}

/// One decoder level. The coarsest level refines its input with two residual
/// blocks; finer levels first merge the upsampled coarser output.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    reduce: Option<Conv2d>,
    blocks: Vec<ResBlock>,
    up: Option<Upsample>,
    out_channels: usize,
}

impl DecoderStage {
    /// `widths[s-1]` is the encoder width at scale `s`; `widths[0]` is also the
    /// shared backbone width at the two finer scales.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        scale: usize,
        widths: [usize; 3],
        rng: &mut impl Rng,
    ) -> Self {
        let base = widths[0];
        match scale {
            3 => {
                let c = widths[2];
                Self {
                    reduce: None,
                    blocks: (0..2)
                        .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), c, c, rng))
                        .collect(),
                    up: Some(Upsample::new(store, &format!("{name}.up"), c, widths[1], rng)),
                    out_channels: c,
                }
            }
            _ => {
                let lower = if scale == 2 { widths[1] } else { base };
                let cat = widths[scale - 1] + lower;
                let half = cat / 2;
                Self {
                    reduce: Some(Conv2d::new(store, &format!("{name}.reduce"), cat, half, 3, 1, true, Init::FanIn, rng)),
                    blocks: vec![
                        ResBlock::new(store, &format!("{name}.res0"), half, 2 * base, rng),
                        ResBlock::new(store, &format!("{name}.res1"), 2 * base, base, rng),
                    ],
                    up: (scale == 2).then(|| Upsample::new(store, &format!("{name}.up"), base, base, rng)),
                    out_channels: base,
                }
            }
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    /// Returns the backbone features at this scale and, unless this is the
    /// finest level, the upsampled features for the next level.
    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        fused: Var,
        g_lower: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        let mut h = match (&self.reduce, g_lower) {
            (None, None) => fused,
            (Some(reduce), Some(lower)) => {
                let (a, b) = (g.shape(fused), g.shape(lower));
                if a[0] != b[0] || a[2..] != b[2..] {
                    return Err(Error::ShapeMismatch(format!("decoder inputs {a:?} vs {b:?}")));
                }
                let cat = g.concat_channels(&[fused, lower]);
                let r = reduce.forward(g, store, cat);
                g.relu(r)
            }
            (Some(_), None) => {
                return Err(Error::InvalidConfig("decoder stage requires the coarser output".into()))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidConfig("coarsest decoder stage takes no coarser input".into()))
            }
        };
        for b in &self.blocks {
            h = b.forward(g, store, h);
        }
        let up = self.up.as_ref().map(|u| {
            let y = u.forward(g, store, h);
            g.relu(y)
        });
        Ok((h, up))
    }
}

/// `R = clamp(b + conv3x3(backbone), 0, 1)`.
#[derive(Clone, Debug)]
pub struct RestorationHead {
    conv: Conv2d,
}

impl RestorationHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), channels, 3, 3, 1, true, Init::Zero, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &Graph<T>, store: &ParamStore<T>, backbone: Var, degraded: Var) -> Var {
        let r = self.conv.forward(g, store, backbone);
        let r = g.add(degraded, r);
        g.clamp(r, T::zero(), T::one())
    }
}

/// Two 3x3 convolutions separated by ReLU, then a sigmoid. Finer scales also
/// see the upsampled coarser mask.
#[derive(Clone, Debug)]
pub struct SegmentationHead {
    conv1: Conv2d,
    conv2: Conv2d,
    with_prior: bool,
}

impl SegmentationHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        with_prior: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let cin = channels + usize::from(with_prior);
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, channels, 3, 1, true, Init::FanIn, rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, 1, 3, 1, true, Init::FanIn, rng),
            with_prior,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        backbone: Var,
        prior: Option<Var>,
    ) -> Result<Var> {
        let x = match (self.with_prior, prior) {
            (true, Some(m)) => g.concat_channels(&[backbone, m]),
            (false, None) => backbone,
            (true, None) => return Err(Error::InvalidConfig("segmentation head expects a coarser mask".into())),
            (false, Some(_)) => {
                return Err(Error::InvalidConfig("coarsest segmentation head takes no prior".into()))
            }
        };
        let h = self.conv1.forward(g, store, x);
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h);
        Ok(g.sigmoid(h))
    }
}

/// Motion features from mask-gated encoder features (stream A) and the
/// restored frame (stream B).
#[derive(Clone, Debug)]
pub struct MotionGatedAttention {
    stream_a: Option<Conv2d>,
    stream_b: Conv2d,
}

impl MotionGatedAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        with_encoder: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let half = (channels / 2).max(1);
        Self {
            stream_a: with_encoder.then(|| {
                Conv2d::new(store, &format!("{name}.stream_a"), channels, half, 3, 1, true, Init::FanIn, rng)
            }),
            stream_b: Conv2d::new(store, &format!("{name}.stream_b"), 3, half, 3, 1, true, Init::FanIn, rng),
        }
    }

    pub fn out_channels(&self, channels: usize) -> usize {
        let half = (channels / 2).max(1);
        if self.stream_a.is_some() {
            2 * half
        } else {
            half
        }
    }

    pub fn stream_a(&self) -> Option<&Conv2d> {
        self.stream_a.as_ref()
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        f_t: Var,
        mask: Option<Var>,
        restored: Var,
    ) -> Var {
        let b = self.stream_b.forward(g, store, restored);
        match &self.stream_a {
            Some(conv) => {
                let gated = match mask {
                    Some(m) => g.mul_broadcast(f_t, m),
                    None => f_t,
                };
                let a = conv.forward(g, store, gated);
                g.concat_channels(&[a, b])
            }
            None => b,
        }
    }
}

/// Conv/ReLU/batch-norm/max-pool stack regressing eight residual corner offsets.
#[derive(Clone, Debug)]
pub struct OffsetRegressor {
    blocks: Vec<(Conv2d, BatchNormParams)>,
    head: Linear,
}

impl OffsetRegressor {
    pub const DROPOUT: f64 = 0.2;

    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut cin = in_channels;
        let mut blocks = Vec::with_capacity(widths.len());
        for (i, &w) in widths.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("{name}.block{i}.conv"), cin, w, 3, 1, true, Init::FanIn, rng);
            let bn = batch_norm(store, &format!("{name}.block{i}.bn"), w);
            blocks.push((conv, bn));
            cin = w;
        }
        let head = Linear::new(store, &format!("{name}.fc"), cin, 8, Init::Zero, rng);
        Self { blocks, head }
    }

    /// Residual offsets `[N, 8]` (TL, TR, BR, BL; x then y).
    pub fn forward<T: Scalar>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        h_t: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let (a, b) = (g.shape(h_t), g.shape(h_prev));
        if a != b {
            return Err(Error::ShapeMismatch(format!("regressor inputs {a:?} vs {b:?}")));
        }
        let mut x = g.concat_channels(&[h_t, h_prev]);
        for (conv, bn) in &self.blocks {
            x = conv.forward(g, store, x);
            x = g.relu(x);
            x = g.batch_norm(store, x, bn);
            x = g.max_pool2(x);
        }
        let x = g.global_avg_pool(x);
        let n = g.shape(x)[0];
        let c = g.shape(x)[1];
        let x = g.reshape(x, &[n, c]);
        let x = g.dropout(x, Self::DROPOUT);
        Ok(self.head.forward(g, store, x))
    }
}
