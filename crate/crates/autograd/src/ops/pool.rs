use crate::{Graph, Scalar, Tensor, Var};

/// Output extent of a 2x2/stride-2 pool. A unit dimension stays 1.
fn pooled(d: usize) -> usize {
    (d / 2).max(1)
}

impl<T: Scalar> Graph<T> {
    /// 2x2 max pooling with stride 2 (floor). Dimensions of size 1 are kept.
    pub fn max_pool2(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let (ho, wo) = (pooled(h), pooled(w));
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut argmax = vec![0usize; n * c * ho * wo];
        let od = out.data_mut();
        for nc in 0..n * c {
            let plane = &vx.data()[nc * h * w..(nc + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut arg = 0;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for x in 2 * ox..(2 * ox + 2).min(w) {
                            let v = plane[y * w + x];
                            if v > best {
                                best = v;
                                arg = y * w + x;
                            }
                        }
                    }
                    let o = (nc * ho + oy) * wo + ox;
                    od[o] = best;
                    argmax[o] = nc * h * w + arg;
                }
            }
        }
        let shape = vx.shape().to_vec();
        self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let mut t = Tensor::zeros(&shape);
                let td = t.data_mut();
                for (&a, &u) in argmax.iter().zip(g.data()) {
                    td[a] += u;
                }
                vec![Some(t)]
            }),
        )
    }

    /// Mean over spatial positions, `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let plane = h * w;
        let inv = T::one() / T::of(plane as f64);
        let out = Tensor::from_fn(&[n, c, 1, 1], |i| {
            vx.data()[i * plane..(i + 1) * plane].iter().copied().sum::<T>() * inv
        });
        let shape = vx.shape().to_vec();
        self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let mut t = Tensor::zeros(&shape);
                for (i, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
                    chunk.fill(g.data()[i] * inv);
                }
                vec![Some(t)]
            }),
        )
    }

    /// 2x area downsampling (mean of each 2x2 block). Requires even sizes.
    pub fn avg_pool2(&self, x: Var) -> Var {
        let vx = self.value(x);
        let out = area_downsample2(&vx);
        let shape = vx.shape().to_vec();
        self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                let (ho, wo) = (h / 2, w / 2);
                let q = T::of(0.25);
                let mut t = Tensor::zeros(&shape);
                let td = t.data_mut();
                for nc in 0..n * c {
                    for y in 0..h {
                        for xx in 0..w {
                            td[(nc * h + y) * w + xx] = g.data()[(nc * ho + y / 2) * wo + xx / 2] * q;
                        }
                    }
                }
                vec![Some(t)]
            }),
        )
    }

    /// 2x bilinear upsampling with half-pixel alignment and edge clamping.
    pub fn upsample_bilinear2(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let ty = taps(h);
        let tx = taps(w);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let od = out.data_mut();
        for nc in 0..n * c {
            let plane = &vx.data()[nc * h * w..(nc + 1) * h * w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let (fy, fx) = (T::of(fy), T::of(fx));
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    od[(nc * ho + oy) * wo + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let mut t = Tensor::zeros(&[n, c, h, w]);
                let td = t.data_mut();
                for nc in 0..n * c {
                    let plane = &mut td[nc * h * w..(nc + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let u = g.data()[(nc * ho + oy) * wo + ox];
                            let (fy, fx) = (T::of(fy), T::of(fx));
                            plane[y0 * w + x0] += u * (T::one() - fy) * (T::one() - fx);
                            plane[y0 * w + x1] += u * (T::one() - fy) * fx;
                            plane[y1 * w + x0] += u * fy * (T::one() - fx);
                            plane[y1 * w + x1] += u * fy * fx;
                        }
                    }
                }
                vec![Some(t)]
            }),
        )
    }
}

/// Source taps for each output index of a 2x half-pixel upsample.
fn taps(d: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * d)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (d - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(d - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Mean of each 2x2 block of an NCHW tensor (even spatial sizes).
pub fn area_downsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    assert!(h % 2 == 0 && w % 2 == 0, "area downsampling needs even sizes, got {h}x{w}");
    let (ho, wo) = (h / 2, w / 2);
    let q = T::of(0.25);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let od = out.data_mut();
    for nc in 0..n * c {
        let p = &x.data()[nc * h * w..(nc + 1) * h * w];
        for y in 0..ho {
            for xx in 0..wo {
                let s = p[2 * y * w + 2 * xx]
                    + p[2 * y * w + 2 * xx + 1]
                    + p[(2 * y + 1) * w + 2 * xx]
                    + p[(2 * y + 1) * w + 2 * xx + 1];
                od[(nc * ho + y) * wo + xx] = s * q;
            }
        }
    }
    out
}

/// Bilinear 2x upsampling of a plain tensor (no graph).
pub fn upsample_bilinear2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let g = Graph::<T>::new(crate::Mode::Eval);
    g.set_grad_enabled(false);
    let v = g.constant(x.clone());
    let out = g.upsample_bilinear2(v);
    (*g.value(out)).clone()
}
