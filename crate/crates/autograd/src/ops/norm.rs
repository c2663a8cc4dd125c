use crate::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Parameter handles of a batch-normalization layer.
#[derive(Clone, Copy, Debug)]
pub struct BatchNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> Graph<T> {
    /// Per-channel batch normalization over `(N, H, W)`.
    ///
    /// Training mode normalizes with batch statistics and records updated
    /// running statistics (see [`Graph::take_buffer_updates`]); evaluation
    /// mode uses the stored running statistics.
    pub fn batch_norm(&self, store: &ParamStore<T>, x: Var, p: &BatchNormParams) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let plane = h * w;
        let m = n * plane;
        let gamma_v = self.param(store, p.gamma);
        let beta_v = self.param(store, p.beta);
        let gamma = self.value(gamma_v);
        let beta = self.value(beta_v);
        let eps = T::of(p.eps);

        let (mean, var) = if self.is_training() {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += vx.item(b)[ch * plane..(ch + 1) * plane].iter().copied().sum::<T>();
                }
                let mu = s / T::of(m as f64);
                let mut ss = T::zero();
                for b in 0..n {
                    for &v in &vx.item(b)[ch * plane..(ch + 1) * plane] {
                        ss += (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = ss / T::of(m as f64);
            }
            let mom = T::of(p.momentum);
            let unbias = if m > 1 {
                T::of(m as f64 / (m as f64 - 1.0))
            } else {
                T::one()
            };
            let rm = store.value(p.running_mean);
            let rv = store.value(p.running_var);
            let new_mean = Tensor::from_fn(&[c], |i| (T::one() - mom) * rm.data()[i] + mom * mean[i]);
            let new_var = Tensor::from_fn(&[c], |i| {
                (T::one() - mom) * rv.data()[i] + mom * var[i] * unbias
            });
            self.record_buffer_update(p.running_mean, new_mean);
            self.record_buffer_update(p.running_var, new_var);
            (mean, var)
        } else {
            (
                store.value(p.running_mean).data().to_vec(),
                store.value(p.running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(vx.shape());
        let mut out = Tensor::zeros(vx.shape());
        for b in 0..n {
            let src = vx.item(b);
            let xh = xhat.item_mut(b);
            for ch in 0..c {
                for i in ch * plane..(ch + 1) * plane {
                    xh[i] = (src[i] - mean[ch]) * inv_std[ch];
                }
            }
            let dst = out.item_mut(b);
            let xh = xhat.item(b);
            for ch in 0..c {
                for i in ch * plane..(ch + 1) * plane {
                    dst[i] = gamma.data()[ch] * xh[i] + beta.data()[ch];
                }
            }
        }
        let training = self.is_training();
        self.push(
            out,
            &[x, gamma_v, beta_v],
            Box::new(move |g, wants| {
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for b in 0..n {
                    let gi = g.item(b);
                    let xh = xhat.item(b);
                    for ch in 0..c {
                        for i in ch * plane..(ch + 1) * plane {
                            sum_g[ch] += gi[i];
                            sum_gx[ch] += gi[i] * xh[i];
                        }
                    }
                }
                let gx = wants[0].then(|| {
                    let mut t = Tensor::zeros(g.shape());
                    let mf = T::of(m as f64);
                    for b in 0..n {
                        let gi = g.item(b);
                        let xh = xhat.item(b);
                        let dst = t.item_mut(b);
                        for ch in 0..c {
                            let k = gamma.data()[ch] * inv_std[ch];
                            for i in ch * plane..(ch + 1) * plane {
                                dst[i] = if training {
                                    k * (gi[i] - sum_g[ch] / mf - xh[i] * sum_gx[ch] / mf)
                                } else {
                                    k * gi[i]
                                };
                            }
                        }
                    }
                    t
                });
                vec![
                    gx,
                    wants[1].then(|| Tensor::new(&[c], sum_gx.clone())),
                    wants[2].then(|| Tensor::new(&[c], sum_g.clone())),
                ]
            }),
        )
    }
}
