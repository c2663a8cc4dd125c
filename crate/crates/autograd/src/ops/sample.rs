use crate::{Graph, Scalar, Tensor, Var};

/// Precomputed bilinear taps for resampling a batch of images.
///
/// Sampling positions are in index space: `(u, v) = (2.0, 3.0)` is the
/// center of column 2, row 3. Taps falling outside the source read zero.
#[derive(Clone, Debug)]
pub struct SampleGrid {
    n: usize,
    src_h: usize,
    src_w: usize,
    out_h: usize,
    out_w: usize,
    /// `n * out_h * out_w` entries of four `(source offset, weight)` pairs.
    taps: Vec<[(u32, f64); 4]>,
}

impl SampleGrid {
    /// Builds taps from a per-item map `(item, x, y) -> (u, v)` over output pixels.
    pub fn new(
        n: usize,
        src: (usize, usize),
        out: (usize, usize),
        mut locate: impl FnMut(usize, usize, usize) -> (f64, f64),
    ) -> Self {
        let (src_h, src_w) = src;
        let (out_h, out_w) = out;
        let mut taps = Vec::with_capacity(n * out_h * out_w);
        for b in 0..n {
            for y in 0..out_h {
                for x in 0..out_w {
                    let (u, v) = locate(b, x, y);
                    taps.push(bilinear_taps(u, v, src_h, src_w));
                }
            }
        }
        Self {
            n,
            src_h,
            src_w,
            out_h,
            out_w,
            taps,
        }
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn out_size(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Applies the grid to a plain NCHW tensor.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!((n, h, w), (self.n, self.src_h, self.src_w), "sample grid/input mismatch");
        let (plane, oplane) = (h * w, self.out_h * self.out_w);
        let mut out = Tensor::zeros(&[n, c, self.out_h, self.out_w]);
        for b in 0..n {
            let taps = &self.taps[b * oplane..(b + 1) * oplane];
            let src = x.item(b);
            let dst = out.item_mut(b);
            for ch in 0..c {
                let sp = &src[ch * plane..(ch + 1) * plane];
                for (o, t) in dst[ch * oplane..(ch + 1) * oplane].iter_mut().zip(taps) {
                    let mut acc = T::zero();
                    for &(idx, wgt) in t {
                        acc += sp[idx as usize] * T::of(wgt);
                    }
                    *o = acc;
                }
            }
        }
        out
    }

    /// Adjoint of [`SampleGrid::apply`].
    pub fn apply_adjoint<T: Scalar>(&self, g: &Tensor<T>) -> Tensor<T> {
        let (n, c, _, _) = g.dims4();
        let (plane, oplane) = (self.src_h * self.src_w, self.out_h * self.out_w);
        let mut out = Tensor::zeros(&[n, c, self.src_h, self.src_w]);
        for b in 0..n {
            let taps = &self.taps[b * oplane..(b + 1) * oplane];
            let src = g.item(b);
            let dst = out.item_mut(b);
            for ch in 0..c {
                let dp = &mut dst[ch * plane..(ch + 1) * plane];
                for (&u, t) in src[ch * oplane..(ch + 1) * oplane].iter().zip(taps) {
                    for &(idx, wgt) in t {
                        if wgt != 0.0 {
                            dp[idx as usize] += u * T::of(wgt);
                        }
                    }
                }
            }
        }
        out
    }
}

fn bilinear_taps(u: f64, v: f64, h: usize, w: usize) -> [(u32, f64); 4] {
    let mut taps = [(0u32, 0.0); 4];
    if !(u.is_finite() && v.is_finite()) {
        return taps;
    }
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ];
    for (t, &(cx, cy, wgt)) in taps.iter_mut().zip(&corners) {
        if cx >= 0.0 && cy >= 0.0 && cx < w as f64 && cy < h as f64 {
            *t = ((cy as usize * w + cx as usize) as u32, wgt);
        }
    }
    taps
}

impl<T: Scalar> Graph<T> {
    /// Differentiable (in `x`) bilinear resampling with a fixed grid.
    pub fn sample(&self, x: Var, grid: SampleGrid) -> Var {
        let out = grid.apply(&self.value(x));
        self.push(
            out,
            &[x],
            Box::new(move |g, _| vec![Some(grid.apply_adjoint(g))]),
        )
    }
}
