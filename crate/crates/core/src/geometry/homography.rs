use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::{Error, Result};

/// Width and height of a frame in pixels.
///
/// Pixel `(col, row)` covers the unit square `[col, col+1) x [row, row+1)`;
/// its center sits at `(col + 0.5, row + 0.5)`. Frame corners are therefore
/// `(0,0)`, `(W,0)`, `(W,H)`, `(0,H)`, which makes `diag(s, s, 1)` the exact
/// coordinate change between pyramid levels related by area averaging.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FrameSize {
    pub width: usize,
    pub height: usize,
}

impl FrameSize {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    /// Corners in TL, TR, BR, BL order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (w, h) = (self.width as f64, self.height as f64);
        [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]]
    }

    /// Size at pyramid level `s` (1 = full resolution).
    pub fn at_scale(&self, s: usize) -> FrameSize {
        let f = 1 << (s - 1);
        FrameSize::new(self.width / f, self.height / f)
    }
}

/// Projective map of the image plane acting on `[x, y, 1]`, normalized so
/// that the bottom-right entry is 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

const MIN_DET: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    /// Rotation by `angle` radians and uniform `scale` about `center`, then translation.
    pub fn similarity(scale: f64, angle: f64, center: [f64; 2], t: [f64; 2]) -> Self {
        let (s, c) = angle.sin_cos();
        let (a, b) = (scale * c, scale * s);
        let [cx, cy] = center;
        Self(Matrix3::new(
            a,
            -b,
            cx - a * cx + b * cy + t[0],
            b,
            a,
            cy - b * cx - a * cy + t[1],
            0.0,
            0.0,
            1.0,
        ))
    }

    /// Normalizes `m` so that `m[2][2] == 1` and checks invertibility.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let z = m[(2, 2)];
        if !z.is_finite() || z.abs() < 1e-15 {
            return Err(Error::SingularConfiguration(format!(
                "homography with h33 = {z} cannot be normalized"
            )));
        }
        let n = m / z;
        if !n.iter().all(|v| v.is_finite()) || n.determinant().abs() <= MIN_DET {
            return Err(Error::SingularConfiguration(
                "homography is not invertible".into(),
            ));
        }
        Ok(Self(n))
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self> {
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let v = self.0 * Vector3::new(p[0], p[1], 1.0);
        [v[0] / v[2], v[1] / v[2]]
    }

    pub fn inverse(&self) -> Homography {
        let inv = self
            .0
            .try_inverse()
            .expect("homography invariant guarantees invertibility");
        Self(inv / inv[(2, 2)])
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (self.0 - other.0).abs().max()
    }

    /// Conjugation `R * self * R^-1` by an involutive reflection of the frame
    /// (`flip_x`: `x -> W - x`, `flip_y`: `y -> H - y`).
    pub fn reflected(&self, size: FrameSize, flip_x: bool, flip_y: bool) -> Homography {
        let mut r = Matrix3::identity();
        if flip_x {
            r[(0, 0)] = -1.0;
            r[(0, 2)] = size.width as f64;
        }
        if flip_y {
            r[(1, 1)] = -1.0;
            r[(1, 2)] = size.height as f64;
        }
        let m = r * self.0 * r;
        Self(m / m[(2, 2)])
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

/// Displacements of the four frame corners (TL, TR, BR, BL) in pixels.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CornerOffsets(pub [[f64; 2]; 4]);

impl CornerOffsets {
    pub fn zero() -> Self {
        Self([[0.0; 2]; 4])
    }

    pub fn uniform(dx: f64, dy: f64) -> Self {
        Self([[dx, dy]; 4])
    }

    pub fn from_flat(v: &[f64]) -> Self {
        assert_eq!(v.len(), 8, "corner offsets need 8 values");
        let mut d = [[0.0; 2]; 4];
        for (i, c) in d.iter_mut().enumerate() {
            *c = [v[2 * i], v[2 * i + 1]];
        }
        Self(d)
    }

    pub fn to_flat(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for (i, c) in self.0.iter().enumerate() {
            out[2 * i] = c[0];
            out[2 * i + 1] = c[1];
        }
        out
    }

    /// Displaced corner positions for a frame of `size`.
    pub fn displaced(&self, size: FrameSize) -> [[f64; 2]; 4] {
        let mut q = size.corners();
        for (p, d) in q.iter_mut().zip(&self.0) {
            p[0] += d[0];
            p[1] += d[1];
        }
        q
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut d = self.0;
        for c in &mut d {
            c[0] *= factor;
            c[1] *= factor;
        }
        Self(d)
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Fails when any three of the points are collinear (within `1e-9`).
pub fn check_quadrilateral(q: &[[f64; 2]; 4]) -> Result<()> {
    for skip in 0..4 {
        let pts: Vec<[f64; 2]> = (0..4).filter(|&i| i != skip).map(|i| q[i]).collect();
        let c = cross(pts[0], pts[1], pts[2]);
        if !c.is_finite() || c.abs() < 1e-9 {
            return Err(Error::SingularConfiguration(format!(
                "displaced corners {q:?} contain three collinear points"
            )));
        }
    }
    Ok(())
}

/// Similarity normalization (Hartley): centroid to origin, mean distance sqrt(2).
fn normalizer(pts: &[[f64; 2]; 4]) -> Matrix3<f64> {
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / 4.0;
    let mean = pts
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0;
    let s = if mean > 1e-12 {
        std::f64::consts::SQRT_2 / mean
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Homography taking the frame corners to the displaced corners, via the
/// smallest right singular vector of the normalized 8x9 DLT system.
pub fn dlt_solve(offsets: &CornerOffsets, size: FrameSize) -> Result<Homography> {
    let src = size.corners();
    let dst = offsets.displaced(size);
    check_quadrilateral(&dst)?;
    let ts = normalizer(&src);
    let td = normalizer(&dst);
    // Padded with a zero row so the SVD exposes the full right null space.
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..4 {
        let p = ts * Vector3::new(src[i][0], src[i][1], 1.0);
        let q = td * Vector3::new(dst[i][0], dst[i][1], 1.0);
        let (x, y) = (p[0] / p[2], p[1] / p[2]);
        let (u, v) = (q[0] / q[2], q[1] / q[2]);
        let r = 2 * i;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::SingularConfiguration("SVD did not converge".into()))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let h: SVector<f64, 9> = v_t.row(min_idx).transpose();
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or_else(|| Error::SingularConfiguration("degenerate normalization".into()))?;
    Homography::from_matrix(td_inv * hn * ts)
}

/// Exact 8x8 solve of the four-point system with `h33 = 1`.
///
/// Returns the eight free entries (row-major, without `h33`) together with
/// the LU factorization used, so callers can propagate derivatives.
pub(crate) fn four_point_solve(
    src: &[[f64; 2]; 4],
    dst: &[[f64; 2]; 4],
) -> Result<(SVector<f64, 8>, nalgebra::LU<f64, nalgebra::U8, nalgebra::U8>)> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let [x, y] = src[i];
        let [u, v] = dst[i];
        let r = 2 * i;
        a[(r, 0)] = x;
        a[(r, 1)] = y;
        a[(r, 2)] = 1.0;
        a[(r, 6)] = -u * x;
        a[(r, 7)] = -u * y;
        b[r] = u;
        a[(r + 1, 3)] = x;
        a[(r + 1, 4)] = y;
        a[(r + 1, 5)] = 1.0;
        a[(r + 1, 6)] = -v * x;
        a[(r + 1, 7)] = -v * y;
        b[r + 1] = v;
    }
    let lu = a.lu();
    let h = lu
        .solve(&b)
        .filter(|h| h.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::SingularConfiguration("four-point system is singular".into()))?;
    Ok((h, lu))
}

/// Displacements of the frame corners under `h`.
pub fn offsets_from_homography(h: &Homography, size: FrameSize) -> CornerOffsets {
    let mut d = [[0.0; 2]; 4];
    for (o, c) in d.iter_mut().zip(size.corners()) {
        let p = h.apply(c);
        *o = [p[0] - c[0], p[1] - c[1]];
    }
    CornerOffsets(d)
}

/// `S * h * S^-1` with `S = diag(factor, factor, 1)`: the same motion expressed
/// in coordinates scaled by `factor`.
pub fn scale_homography(h: &Homography, factor: f64) -> Homography {
    assert!(factor > 0.0, "scale factor must be positive");
    let m = h.0;
    let mut out = m;
    out[(0, 2)] = m[(0, 2)] * factor;
    out[(1, 2)] = m[(1, 2)] * factor;
    out[(2, 0)] = m[(2, 0)] / factor;
    out[(2, 1)] = m[(2, 1)] / factor;
    Homography(out)
}

/// `h_outer ∘ h_inner`: apply `h_inner` first.
pub fn compose(h_outer: &Homography, h_inner: &Homography) -> Homography {
    let m = h_outer.0 * h_inner.0;
    Homography(m / m[(2, 2)])
}

/// Mean Euclidean distance between the displaced corners of two offset sets.
pub fn mace(pred: &CornerOffsets, gt: &CornerOffsets) -> f64 {
    pred.0
        .iter()
        .zip(&gt.0)
        .map(|(p, g)| ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt())
        .sum::<f64>()
        / 4.0
}
