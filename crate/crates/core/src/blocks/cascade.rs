use mostnet_autograd::{Graph, Scalar, Tensor, Var};
use nalgebra::{SMatrix, SVector};

use crate::geometry::{check_quadrilateral, compose, four_point_solve, FrameSize, Homography};
use crate::{Error, Result};

/// Composes residual corner offsets with prior homographies.
///
/// For each batch item the residual offsets `r` define `dH` (frame corners to
/// displaced corners) and the result is `H = dH ∘ prior`. Returns the
/// cumulative offsets `H(c_i) - c_i` as a differentiable `[N, 8]` node, plus
/// the composed homographies. Gradients flow to `r` only.
pub fn corner_cascade<T: Scalar>(
    g: &Graph<T>,
    residual: Var,
    priors: &[Homography],
    size: FrameSize,
) -> Result<(Var, Vec<Homography>)> {
    let rv = g.value(residual);
    let shape = rv.shape().to_vec();
    if shape.len() != 2 || shape[1] != 8 || shape[0] != priors.len() {
        return Err(Error::ShapeMismatch(format!(
            "residual offsets {shape:?} for {} priors",
            priors.len()
        )));
    }
    let corners = size.corners();
    let n = priors.len();
    let mut out = Vec::with_capacity(n * 8);
    let mut homs = Vec::with_capacity(n);
    let mut jacobians = Vec::with_capacity(n);
    for (b, prior) in priors.iter().enumerate() {
        let r: Vec<f64> = rv.data()[b * 8..(b + 1) * 8].iter().map(|v| v.as_f64()).collect();
        let mut dst = corners;
        for i in 0..4 {
            dst[i][0] += r[2 * i];
            dst[i][1] += r[2 * i + 1];
        }
        check_quadrilateral(&dst)?;
        let (h, lu) = four_point_solve(&corners, &dst)?;
        let delta = Homography::from_row_major(&[h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])?;

        // dh/dr_k = A^-1 e_k * (1 + x h6 + y h7), with (x, y) the k-th source corner.
        let mut dh_dr = SMatrix::<f64, 8, 8>::zeros();
        for k in 0..8 {
            let [x, y] = corners[k / 2];
            let mut e = SVector::<f64, 8>::zeros();
            e[k] = 1.0 + x * h[6] + y * h[7];
            let col = lu
                .solve(&e)
                .ok_or_else(|| Error::SingularConfiguration("four-point system is singular".into()))?;
            dh_dr.set_column(k, &col);
        }
        let mut dq_dh = SMatrix::<f64, 8, 8>::zeros();
        for (i, c) in corners.iter().enumerate() {
            let p = prior.apply(*c);
            let w = h[6] * p[0] + h[7] * p[1] + 1.0;
            let qx = (h[0] * p[0] + h[1] * p[1] + h[2]) / w;
            let qy = (h[3] * p[0] + h[4] * p[1] + h[5]) / w;
            let rx = [p[0], p[1], 1.0, 0.0, 0.0, 0.0, -qx * p[0], -qx * p[1]];
            let ry = [0.0, 0.0, 0.0, p[0], p[1], 1.0, -qy * p[0], -qy * p[1]];
            for j in 0..8 {
                dq_dh[(2 * i, j)] = rx[j] / w;
                dq_dh[(2 * i + 1, j)] = ry[j] / w;
            }
            out.push(T::of(qx - c[0]));
            out.push(T::of(qy - c[1]));
        }
        jacobians.push(dq_dh * dh_dr);
        homs.push(compose(&delta, prior));
    }
    let value = Tensor::new(&[n, 8], out);
    let node = g.push(
        value,
        &[residual],
        Box::new(move |grad, _| {
            let mut gr = Tensor::zeros(&[n, 8]);
            for (b, jac) in jacobians.iter().enumerate() {
                let go = SVector::<f64, 8>::from_fn(|i, _| grad.data()[b * 8 + i].as_f64());
                let gi = jac.transpose() * go;
                for i in 0..8 {
                    gr.data_mut()[b * 8 + i] = T::of(gi[i]);
                }
            }
            vec![Some(gr)]
        }),
    );
    Ok((node, homs))
}
