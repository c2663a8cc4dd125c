use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection};

use crate::{Graph, Scalar, Tensor, Var};

/// Row/column plans for a fixed `H x W` plane.
struct Plans<T: Scalar> {
    h: usize,
    w: usize,
    half: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Plans<T> {
    /// Unnormalized forward 2D DFT of a real plane, keeping columns `0..W/2+1`.
    fn forward_half(&self, plane: &[T], out: &mut [Complex<T>]) {
        let (h, w, half) = (self.h, self.w, self.half);
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        for y in 0..h {
            for (r, &v) in row.iter_mut().zip(&plane[y * w..(y + 1) * w]) {
                *r = Complex::new(v, T::zero());
            }
            self.row_fwd.process(&mut row);
            out[y * half..(y + 1) * half].copy_from_slice(&row[..half]);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..half {
            for y in 0..h {
                col[y] = out[y * half + x];
            }
            self.col_fwd.process(&mut col);
            for y in 0..h {
                out[y * half + x] = col[y];
            }
        }
    }

    /// `Re(F^H pad(z))`: unnormalized inverse 2D DFT of a half spectrum
    /// zero-padded to full width, real part.
    fn inverse_from_half(&self, z: &[Complex<T>], out: &mut [T]) {
        let (h, w, half) = (self.h, self.w, self.half);
        let mut tmp = z.to_vec();
        let mut col = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..half {
            for y in 0..h {
                col[y] = tmp[y * half + x];
            }
            self.col_inv.process(&mut col);
            for y in 0..h {
                tmp[y * half + x] = col[y];
            }
        }
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        for y in 0..h {
            row[..half].copy_from_slice(&tmp[y * half..(y + 1) * half]);
            row[half..].fill(Complex::new(T::zero(), T::zero()));
            self.row_inv.process(&mut row);
            for (o, r) in out[y * w..(y + 1) * w].iter_mut().zip(&row) {
                *o = r.re;
            }
        }
    }

    /// Hermitian weight of half-spectrum column `x` in the real inverse.
    fn column_weight(&self, x: usize) -> T {
        if x == 0 || (self.w % 2 == 0 && x == self.w / 2) {
            T::one()
        } else {
            T::of(2.0)
        }
    }
}

impl<T: Scalar> Graph<T> {
    fn plans(&self, h: usize, w: usize) -> Plans<T> {
        let mut p = self.fft.borrow_mut();
        Plans {
            h,
            w,
            half: w / 2 + 1,
            row_fwd: p.plan_fft(w, FftDirection::Forward),
            row_inv: p.plan_fft(w, FftDirection::Inverse),
            col_fwd: p.plan_fft(h, FftDirection::Forward),
            col_inv: p.plan_fft(h, FftDirection::Inverse),
        }
    }

    /// Real-input 2D FFT. `[N,C,H,W] -> [N,2C,H,W/2+1]` with real parts in
    /// channels `0..C` and imaginary parts in `C..2C`.
    pub fn rfft2(&self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, c, h, w) = vx.dims4();
        let plans = self.plans(h, w);
        let half = plans.half;
        let (plane, hplane) = (h * w, h * half);
        let mut out = Tensor::zeros(&[n, 2 * c, h, half]);
        let mut spec = vec![Complex::new(T::zero(), T::zero()); hplane];
        for b in 0..n {
            let src = vx.item(b);
            let dst = out.item_mut(b);
            for ch in 0..c {
                plans.forward_half(&src[ch * plane..(ch + 1) * plane], &mut spec);
                for (i, z) in spec.iter().enumerate() {
                    dst[ch * hplane + i] = z.re;
                    dst[(c + ch) * hplane + i] = z.im;
                }
            }
        }
        self.push(
            out,
            &[x],
            Box::new(move |g, _| {
                let mut t = Tensor::zeros(&[n, c, h, w]);
                let mut z = vec![Complex::new(T::zero(), T::zero()); hplane];
                for b in 0..n {
                    let gi = g.item(b);
                    let dst = t.item_mut(b);
                    for ch in 0..c {
                        for (i, zi) in z.iter_mut().enumerate() {
                            *zi = Complex::new(gi[ch * hplane + i], gi[(c + ch) * hplane + i]);
                        }
                        plans.inverse_from_half(&z, &mut dst[ch * plane..(ch + 1) * plane]);
                    }
                }
                vec![Some(t)]
            }),
        )
    }

    /// Inverse of [`Graph::rfft2`] for an output width `w`:
    /// `[N,2C,H,W/2+1] -> [N,C,H,W]`.
    pub fn irfft2(&self, z: Var, w: usize) -> Var {
        let vz = self.value(z);
        let (n, c2, h, half) = vz.dims4();
        assert_eq!(c2 % 2, 0, "irfft2 expects stacked real/imaginary channels");
        assert_eq!(half, w / 2 + 1, "irfft2 width mismatch");
        let c = c2 / 2;
        let plans = self.plans(h, w);
        let (plane, hplane) = (h * w, h * half);
        let inv_n = T::one() / T::of(plane as f64);
        let weights: Vec<T> = (0..half).map(|x| plans.column_weight(x) * inv_n).collect();
        let mut out = Tensor::zeros(&[n, c, h, w]);
        let mut spec = vec![Complex::new(T::zero(), T::zero()); hplane];
        for b in 0..n {
            let src = vz.item(b);
            let dst = out.item_mut(b);
            for ch in 0..c {
                for (i, s) in spec.iter_mut().enumerate() {
                    let wgt = weights[i % half];
                    *s = Complex::new(src[ch * hplane + i] * wgt, src[(c + ch) * hplane + i] * wgt);
                }
                plans.inverse_from_half(&spec, &mut dst[ch * plane..(ch + 1) * plane]);
            }
        }
        self.push(
            out,
            &[z],
            Box::new(move |g, _| {
                let mut t = Tensor::zeros(&[n, c2, h, half]);
                let mut spec = vec![Complex::new(T::zero(), T::zero()); hplane];
                for b in 0..n {
                    let gi = g.item(b);
                    let dst = t.item_mut(b);
                    for ch in 0..c {
                        plans.forward_half(&gi[ch * plane..(ch + 1) * plane], &mut spec);
                        for (i, s) in spec.iter().enumerate() {
                            let wgt = weights[i % half];
                            dst[ch * hplane + i] = s.re * wgt;
                            dst[(c + ch) * hplane + i] = s.im * wgt;
                        }
                    }
                }
                vec![Some(t)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mode;

    #[test]
    fn rfft_matches_direct_dft_and_round_trips() {
        for &(h, w) in &[(4usize, 6usize), (5, 7), (8, 10)] {
            let x = Tensor::<f64>::from_fn(&[1, 1, h, w], |i| ((i * 7 % 11) as f64 * 0.3).cos());
            let g = Graph::<f64>::new(Mode::Eval);
            let z = g.rfft2(g.constant(x.clone()));
            let zv = g.value(z);
            let half = w / 2 + 1;
            for ky in 0..h {
                for kx in 0..half {
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for xx in 0..w {
                            let ang = -2.0
                                * std::f64::consts::PI
                                * (ky as f64 * y as f64 / h as f64 + kx as f64 * xx as f64 / w as f64);
                            re += x.at4(0, 0, y, xx) * ang.cos();
                            im += x.at4(0, 0, y, xx) * ang.sin();
                        }
                    }
                    assert!((zv.at4(0, 0, ky, kx) - re).abs() < 1e-9);
                    assert!((zv.at4(0, 1, ky, kx) - im).abs() < 1e-9);
                }
            }
            let back = g.value(g.irfft2(z, w));
            for (a, b) in back.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
