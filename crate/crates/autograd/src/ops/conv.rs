use crate::{matmul, Graph, Scalar, Tensor, Var};

pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

pub fn conv_transpose2d_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

#[derive(Clone, Copy)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `ox` whose source `ox * stride + kx - pad` lies inside `[0, w)`.
    #[inline]
    fn valid_x(&self, kx: usize) -> (usize, usize) {
        let lo = if kx >= self.pad {
            0
        } else {
            (self.pad - kx).div_ceil(self.stride)
        };
        let hi = if self.w + self.pad > kx {
            ((self.w + self.pad - kx - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn im2col<T: Scalar>(src: &[T], g: &Geom, col: &mut [T]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &src[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (x0, x1) = g.valid_x(kx);
                for oy in 0..g.ho {
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    line[..x0].fill(T::zero());
                    line[x1..].fill(T::zero());
                    if g.stride == 1 {
                        let s0 = x0 + kx - g.pad;
                        line[x0..x1].copy_from_slice(&src_row[s0..s0 + (x1 - x0)]);
                    } else {
                        for ox in x0..x1 {
                            line[ox] = src_row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &Geom, dst: &mut [T]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.c {
        let plane = &mut dst[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * cols..(row + 1) * cols];
                let (x0, x1) = g.valid_x(kx);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in x0..x1 {
                        dst_row[ox * g.stride + kx - g.pad] += line[ox];
                    }
                }
                row += 1;
            }
        }
    }
}

fn add_bias<T: Scalar>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let (n, c, h, w) = out.dims4();
    let plane = h * w;
    for b in 0..n {
        let item = out.item_mut(b);
        for ch in 0..c {
            let bv = bias.data()[ch];
            for v in &mut item[ch * plane..(ch + 1) * plane] {
                *v += bv;
            }
        }
    }
}

fn bias_grad<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = g.dims4();
    let plane = h * w;
    let mut t = Tensor::zeros(&[c]);
    for b in 0..n {
        let item = g.item(b);
        for ch in 0..c {
            t.data_mut()[ch] += item[ch * plane..(ch + 1) * plane].iter().copied().sum();
        }
    }
    t
}

impl<T: Scalar> Graph<T> {
    /// 2D convolution, `x [N,Ci,H,W]`, `w [Co,Ci,k,k]`, optional bias `[Co]`.
    pub fn conv2d(&self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let (n, ci, h, wd) = vx.dims4();
        let (co, wci, k, k2) = vw.dims4();
        assert_eq!(k, k2, "square kernels only");
        assert_eq!(ci, wci, "conv2d: input has {ci} channels, kernel expects {wci}");
        let geom = Geom {
            c: ci,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho: conv2d_output_size(h, k, stride, pad),
            wo: conv2d_output_size(wd, k, stride, pad),
        };
        let (rows, cols) = (geom.rows(), geom.cols());
        let mut out = Tensor::zeros(&[n, co, geom.ho, geom.wo]);
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); rows * cols]
        };
        for b in 0..n {
            let src: &[T] = if geom.is_pointwise() {
                vx.item(b)
            } else {
                im2col(vx.item(b), &geom, &mut col);
                &col
            };
            matmul(vw.data(), co, rows, false, src, rows, cols, false, out.item_mut(b), false);
        }
        let mut parents = vec![x, w];
        if let Some(bv) = bias {
            add_bias(&mut out, &self.value(bv));
            parents.push(bv);
        }
        self.push(
            out,
            &parents,
            Box::new(move |g, wants| {
                let mut gx = wants[0].then(|| Tensor::zeros(vx.shape()));
                let mut gw = wants[1].then(|| Tensor::zeros(vw.shape()));
                let mut col = vec![T::zero(); if geom.is_pointwise() { 0 } else { rows * cols }];
                let mut dcol = vec![T::zero(); rows * cols];
                for b in 0..n {
                    let gy = g.item(b);
                    if let Some(gw) = gw.as_mut() {
                        let src: &[T] = if geom.is_pointwise() {
                            vx.item(b)
                        } else {
                            im2col(vx.item(b), &geom, &mut col);
                            &col
                        };
                        matmul(gy, co, cols, false, src, rows, cols, true, gw.data_mut(), true);
                    }
                    if let Some(gx) = gx.as_mut() {
                        if geom.is_pointwise() {
                            matmul(vw.data(), co, rows, true, gy, co, cols, false, gx.item_mut(b), false);
                        } else {
                            matmul(vw.data(), co, rows, true, gy, co, cols, false, &mut dcol, false);
                            col2im(&dcol, &geom, gx.item_mut(b));
                        }
                    }
                }
                let mut res = vec![gx, gw];
                if wants.len() == 3 {
                    res.push(wants[2].then(|| bias_grad(g)));
                }
                res
            }),
        )
    }

    /// Transposed convolution, `x [N,Ci,H,W]`, `w [Ci,Co,k,k]`, optional bias `[Co]`.
    pub fn conv_transpose2d(
        &self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let (n, ci, h, wd) = vx.dims4();
        let (wci, co, k, _) = vw.dims4();
        assert_eq!(ci, wci, "conv_transpose2d: channel mismatch");
        let ho = conv_transpose2d_output_size(h, k, stride, pad);
        let wo = conv_transpose2d_output_size(wd, k, stride, pad);
        // The "image" side of im2col is the (larger) output here.
        let geom = Geom {
            c: co,
            h: ho,
            w: wo,
            k,
            stride,
            pad,
            ho: h,
            wo: wd,
        };
        let (rows, cols) = (geom.rows(), geom.cols());
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        let mut col = vec![T::zero(); rows * cols];
        for b in 0..n {
            matmul(vw.data(), ci, rows, true, vx.item(b), ci, cols, false, &mut col, false);
            col2im(&col, &geom, out.item_mut(b));
        }
        let mut parents = vec![x, w];
        if let Some(bv) = bias {
            add_bias(&mut out, &self.value(bv));
            parents.push(bv);
        }
        self.push(
            out,
            &parents,
            Box::new(move |g, wants| {
                let mut gx = wants[0].then(|| Tensor::zeros(vx.shape()));
                let mut gw = wants[1].then(|| Tensor::zeros(vw.shape()));
                let mut gcol = vec![T::zero(); rows * cols];
                for b in 0..n {
                    im2col(g.item(b), &geom, &mut gcol);
                    if let Some(gx) = gx.as_mut() {
                        matmul(vw.data(), ci, rows, false, &gcol, rows, cols, false, gx.item_mut(b), false);
                    }
                    if let Some(gw) = gw.as_mut() {
                        matmul(vx.item(b), ci, cols, false, &gcol, rows, cols, true, gw.data_mut(), true);
                    }
                }
                let mut res = vec![gx, gw];
                if wants.len() == 3 {
                    res.push(wants[2].then(|| bias_grad(g)));
                }
                res
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, ci, h, wd) = x.dims4();
        let (co, _, k, _) = w.dims4();
        let ho = conv2d_output_size(h, k, stride, pad);
        let wo = conv2d_output_size(wd, k, stride, pad);
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        for b in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.at4(b, c, iy as usize, ix as usize)
                                            * w.at4(o, c, ky, kx);
                                    }
                                }
                            }
                        }
                        out.data_mut()[((b * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + 1.0) * seed).sin())
    }

    #[test]
    fn conv2d_matches_naive_loops() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)] {
            let x = pseudo(&[2, 3, 7, 9], 0.37);
            let w = pseudo(&[4, 3, k, k], 1.13);
            let g = Graph::<f64>::new(Mode::Eval);
            let (vx, vw) = (g.constant(x.clone()), g.constant(w.clone()));
            let y = g.value(g.conv2d(vx, vw, None, stride, pad));
            let want = naive_conv(&x, &w, stride, pad);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> for the same kernel.
        let x = pseudo(&[1, 3, 8, 10], 0.71);
        let w = pseudo(&[4, 3, 4, 4], 0.29);
        let g = Graph::<f64>::new(Mode::Eval);
        let cx = g.value(g.conv2d(g.constant(x.clone()), g.constant(w.clone()), None, 2, 1));
        let y = pseudo(cx.shape(), 0.53);
        // Transposed kernel layout is [Ci_t = Co, Co_t = Ci, k, k], same memory as w.
        let ty = g.value(g.conv_transpose2d(g.constant(y.clone()), g.constant(w), None, 2, 1));
        assert_eq!(ty.shape(), x.shape());
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
