use crate::{Graph, Scalar, Tensor, Var};

impl<T: Scalar> Graph<T> {
    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let orig = va.shape().to_vec();
        let out = (*va).clone().reshape(shape);
        self.push(
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.clone().reshape(&orig))]),
        )
    }

    /// Concatenation of NCHW tensors along the channel axis.
    pub fn concat_channels(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let (n, _, h, w) = values[0].dims4();
        let chans: Vec<usize> = values
            .iter()
            .map(|v| {
                let (vn, c, vh, vw) = v.dims4();
                assert_eq!((vn, vh, vw), (n, h, w), "concat_channels: shape mismatch");
                c
            })
            .collect();
        let total: usize = chans.iter().sum();
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, total, h, w]);
        for b in 0..n {
            let dst = out.item_mut(b);
            let mut off = 0;
            for (v, &c) in values.iter().zip(&chans) {
                dst[off * plane..(off + c) * plane].copy_from_slice(v.item(b));
                off += c;
            }
        }
        self.push(
            out,
            parts,
            Box::new(move |g, wants| {
                let mut res = Vec::with_capacity(chans.len());
                let mut off = 0;
                for (i, &c) in chans.iter().enumerate() {
                    if wants[i] {
                        let mut t = Tensor::zeros(&[n, c, h, w]);
                        for b in 0..n {
                            t.item_mut(b)
                                .copy_from_slice(&g.item(b)[off * plane..(off + c) * plane]);
                        }
                        res.push(Some(t));
                    } else {
                        res.push(None);
                    }
                    off += c;
                }
                res
            }),
        )
    }

    /// Channels `[start, start + len)` of an NCHW tensor.
    pub fn slice_channels(&self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        let (n, c, h, w) = va.dims4();
        assert!(start + len <= c, "slice_channels out of range");
        let plane = h * w;
        let mut out = Tensor::zeros(&[n, len, h, w]);
        for b in 0..n {
            out.item_mut(b)
                .copy_from_slice(&va.item(b)[start * plane..(start + len) * plane]);
        }
        self.push(
            out,
            &[a],
            Box::new(move |g, _| {
                let mut t = Tensor::zeros(&[n, c, h, w]);
                for b in 0..n {
                    t.item_mut(b)[start * plane..(start + len) * plane].copy_from_slice(g.item(b));
                }
                vec![Some(t)]
            }),
        )
    }
}
