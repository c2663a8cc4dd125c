use rand::Rng;

use crate::{Graph, Scalar, Tensor, Var};

impl<T: Scalar> Graph<T> {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x + y);
        self.push(
            out,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x - y);
        self.push(
            out,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = va.zip_map(&vb, |x, y| x * y);
        self.push(
            out,
            &[a, b],
            Box::new(move |g, wants| {
                vec![
                    wants[0].then(|| g.zip_map(&vb, |u, y| u * y)),
                    wants[1].then(|| g.zip_map(&va, |u, x| u * x)),
                ]
            }),
        )
    }

    pub fn scale(&self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, &[a], Box::new(move |g, _| vec![Some(g.map(|v| v * s))]))
    }

    /// Sum of nodes of identical shape.
    pub fn add_n(&self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut out = (*self.value(vars[0])).clone();
        for &v in &vars[1..] {
            out.add_assign(&self.value(v));
        }
        let n = vars.len();
        self.push(out, vars, Box::new(move |g, _| vec![Some(g.clone()); n]))
    }

    pub fn relu(&self, a: Var) -> Var {
        let va = self.value(a);
        let out = va.map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                vec![Some(g.zip_map(&va, |u, x| if x > T::zero() { u } else { T::zero() }))]
            }),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let out = self
            .value(a)
            .map(|x| T::one() / (T::one() + (-x).exp()));
        let y = out.clone();
        self.push(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.zip_map(&y, |u, s| u * s * (T::one() - s)))]),
        )
    }

    /// Elementwise clamp; the gradient passes only where the input is inside `[lo, hi]`.
    pub fn clamp(&self, a: Var, lo: T, hi: T) -> Var {
        let va = self.value(a);
        let out = va.map(|x| x.max(lo).min(hi));
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                vec![Some(g.zip_map(&va, |u, x| {
                    if x >= lo && x <= hi {
                        u
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    /// Product of an NCHW tensor with a tensor whose dims are equal or 1
    /// (channel gates `[N,C,1,1]`, masks `[N,1,H,W]`).
    pub fn mul_broadcast(&self, x: Var, b: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(b));
        let xs = vx.shape().to_vec();
        let bs = vb.shape().to_vec();
        assert_eq!(xs.len(), 4, "mul_broadcast expects NCHW");
        assert_eq!(bs.len(), 4, "mul_broadcast expects a rank-4 factor");
        for d in 0..4 {
            assert!(
                bs[d] == xs[d] || bs[d] == 1,
                "cannot broadcast {bs:?} onto {xs:?}"
            );
        }
        let map = BroadcastMap::new(&xs, &bs);
        let mut out = Tensor::zeros(&xs);
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = vx.data()[i] * vb.data()[map.index(i)];
        }
        self.push(
            out,
            &[x, b],
            Box::new(move |g, wants| {
                let gx = wants[0].then(|| {
                    let mut t = Tensor::zeros(g.shape());
                    for (i, o) in t.data_mut().iter_mut().enumerate() {
                        *o = g.data()[i] * vb.data()[map.index(i)];
                    }
                    t
                });
                let gb = wants[1].then(|| {
                    let mut t = Tensor::zeros(vb.shape());
                    let td = t.data_mut();
                    for (i, (&u, &xv)) in g.data().iter().zip(vx.data()).enumerate() {
                        td[map.index(i)] += u * xv;
                    }
                    t
                });
                vec![gx, gb]
            }),
        )
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let out = Tensor::scalar(va.sum());
        self.push(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = self.value(a).numel();
        let s = self.sum_all(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Inverted dropout: active only in training mode.
    pub fn dropout(&self, a: Var, p: f64) -> Var {
        if !self.is_training() || p <= 0.0 {
            return a;
        }
        let va = self.value(a);
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = self.with_rng(|rng| {
            (0..va.numel())
                .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
                .collect()
        });
        let mask = Tensor::new(va.shape(), mask);
        let out = va.zip_map(&mask, |x, m| x * m);
        self.push(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.zip_map(&mask, |u, m| u * m))]),
        )
    }

    /// `x [N, F] -> x W^T + b` with `W [O, F]`, `b [O]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (vx, vw) = (self.value(x), self.value(w));
        let (n, f) = (vx.shape()[0], vx.numel() / vx.shape()[0]);
        let o = vw.shape()[0];
        assert_eq!(vw.shape()[1], f, "linear: feature size mismatch");
        let mut out = Tensor::zeros(&[n, o]);
        crate::matmul(vx.data(), n, f, false, vw.data(), o, f, true, out.data_mut(), false);
        let mut parents = vec![x, w];
        if let Some(b) = b {
            let vb = self.value(b);
            for row in out.data_mut().chunks_mut(o) {
                for (r, &bv) in row.iter_mut().zip(vb.data()) {
                    *r += bv;
                }
            }
            parents.push(b);
        }
        let xshape = vx.shape().to_vec();
        self.push(
            out,
            &parents,
            Box::new(move |g, wants| {
                let gx = wants[0].then(|| {
                    let mut t = Tensor::zeros(&xshape);
                    crate::matmul(g.data(), n, o, false, vw.data(), o, f, false, t.data_mut(), false);
                    t
                });
                let gw = wants[1].then(|| {
                    let mut t = Tensor::zeros(&[o, f]);
                    crate::matmul(g.data(), n, o, true, vx.data(), n, f, false, t.data_mut(), false);
                    t
                });
                let mut res = vec![gx, gw];
                if wants.len() == 3 {
                    res.push(wants[2].then(|| {
                        let mut t = Tensor::zeros(&[o]);
                        for row in g.data().chunks(o) {
                            for (acc, &v) in t.data_mut().iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        t
                    }));
                }
                res
            }),
        )
    }
}

/// Maps a flat index of the full shape to the flat index of a broadcast operand.
struct BroadcastMap {
    full: [usize; 4],
    strides: [usize; 4],
}

impl BroadcastMap {
    fn new(full: &[usize], small: &[usize]) -> Self {
        let mut strides = [0; 4];
        let mut acc = 1;
        for d in (0..4).rev() {
            strides[d] = if small[d] == 1 { 0 } else { acc };
            acc *= small[d];
        }
        Self {
            full: [full[0], full[1], full[2], full[3]],
            strides,
        }
    }

    #[inline]
    fn index(&self, flat: usize) -> usize {
        let x = flat % self.full[3];
        let r = flat / self.full[3];
        let y = r % self.full[2];
        let r = r / self.full[2];
        let c = r % self.full[1];
        let n = r / self.full[1];
        n * self.strides[0] + c * self.strides[1] + y * self.strides[2] + x * self.strides[3]
    }
}
