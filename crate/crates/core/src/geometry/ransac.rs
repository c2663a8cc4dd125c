use nalgebra::{DMatrix, DVector, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Homography;
use crate::{Error, Result};

/// Dense per-pixel displacement field with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    pub width: usize,
    pub height: usize,
    /// Row-major `(dx, dy)` per pixel.
    pub flow: Vec<[f64; 2]>,
    pub valid: Vec<bool>,
}

impl MotionField {
    /// Field induced by `h` at every pixel center.
    pub fn from_homography(h: &Homography, width: usize, height: usize) -> Self {
        let mut flow = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let q = h.apply(p);
                flow.push([q[0] - p[0], q[1] - p[1]]);
            }
        }
        Self {
            width,
            height,
            flow,
            valid: vec![true; width * height],
        }
    }
}

/// Motion model fitted by [`ransac_partial_affine`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    /// Rotation, uniform scale and translation (4 DoF).
    Similarity,
    /// General affine map (6 DoF).
    Affine,
}

impl MotionModel {
    fn sample_size(self) -> usize {
        match self {
            MotionModel::Similarity => 2,
            MotionModel::Affine => 3,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RansacConfig {
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub model: MotionModel,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            max_iterations: 2000,
            confidence: 0.995,
            model: MotionModel::Similarity,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RansacFit {
    pub homography: Homography,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub iterations: usize,
}

/// Least-squares partial-affine fit of `dst ≈ A src + t`.
fn fit(model: MotionModel, src: &[[f64; 2]], dst: &[[f64; 2]]) -> Option<Matrix3<f64>> {
    let n = src.len();
    match model {
        MotionModel::Similarity => {
            // Unknowns (a, b, tx, ty): u = a x - b y + tx, v = b x + a y + ty.
            let mut a = DMatrix::<f64>::zeros(2 * n, 4);
            let mut rhs = DVector::<f64>::zeros(2 * n);
            for (i, (p, q)) in src.iter().zip(dst).enumerate() {
                a[(2 * i, 0)] = p[0];
                a[(2 * i, 1)] = -p[1];
                a[(2 * i, 2)] = 1.0;
                rhs[2 * i] = q[0];
                a[(2 * i + 1, 0)] = p[1];
                a[(2 * i + 1, 1)] = p[0];
                a[(2 * i + 1, 3)] = 1.0;
                rhs[2 * i + 1] = q[1];
            }
            let sol = a.svd(true, true).solve(&rhs, 1e-12).ok()?;
            let (ca, cb) = (sol[0], sol[1]);
            if ca * ca + cb * cb < 1e-12 {
                return None;
            }
            Some(Matrix3::new(ca, -cb, sol[2], cb, ca, sol[3], 0.0, 0.0, 1.0))
        }
        MotionModel::Affine => {
            let mut a = DMatrix::<f64>::zeros(2 * n, 6);
            let mut rhs = DVector::<f64>::zeros(2 * n);
            for (i, (p, q)) in src.iter().zip(dst).enumerate() {
                a[(2 * i, 0)] = p[0];
                a[(2 * i, 1)] = p[1];
                a[(2 * i, 2)] = 1.0;
                rhs[2 * i] = q[0];
                a[(2 * i + 1, 3)] = p[0];
                a[(2 * i + 1, 4)] = p[1];
                a[(2 * i + 1, 5)] = 1.0;
                rhs[2 * i + 1] = q[1];
            }
            let svd = a.svd(true, true);
            if svd.singular_values.min() < 1e-9 {
                return None;
            }
            let s = svd.solve(&rhs, 1e-12).ok()?;
            Some(Matrix3::new(s[0], s[1], s[2], s[3], s[4], s[5], 0.0, 0.0, 1.0))
        }
    }
}

fn residual(m: &Matrix3<f64>, p: [f64; 2], q: [f64; 2]) -> f64 {
    let u = m[(0, 0)] * p[0] + m[(0, 1)] * p[1] + m[(0, 2)];
    let v = m[(1, 0)] * p[0] + m[(1, 1)] * p[1] + m[(1, 2)];
    ((u - q[0]).powi(2) + (v - q[1]).powi(2)).sqrt()
}

fn collinear(pts: &[[f64; 2]]) -> bool {
    if pts.len() < 3 {
        return false;
    }
    let o = pts[0];
    // Reference direction: the point farthest from the first one.
    let far = pts
        .iter()
        .copied()
        .max_by(|a, b| {
            let da = (a[0] - o[0]).powi(2) + (a[1] - o[1]).powi(2);
            let db = (b[0] - o[0]).powi(2) + (b[1] - o[1]).powi(2);
            da.total_cmp(&db)
        })
        .unwrap();
    let (dx, dy) = (far[0] - o[0], far[1] - o[1]);
    let len = (dx * dx + dy * dy).sqrt();
    if len < 1e-12 {
        return true;
    }
    pts.iter()
        .all(|p| ((p[0] - o[0]) * dy - (p[1] - o[1]) * dx).abs() / len < 1e-9)
}

/// Robust fit of a partial-affine motion to the masked part of a motion field.
///
/// Point pairs are pixel centers and their displaced positions. Minimal
/// samples are drawn with a seeded generator, the hypothesis with the most
/// inliers within `threshold` pixels wins, and the result is refit by least
/// squares on its inliers.
pub fn ransac_partial_affine(
    field: &MotionField,
    mask: &[bool],
    cfg: &RansacConfig,
) -> Result<RansacFit> {
    let (w, h) = (field.width, field.height);
    if mask.len() != w * h || field.flow.len() != w * h || field.valid.len() != w * h {
        return Err(Error::ShapeMismatch(format!(
            "motion field {w}x{h} vs mask of {} pixels",
            mask.len()
        )));
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let f = field.flow[i];
            if mask[i] && field.valid[i] && f[0].is_finite() && f[1].is_finite() {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                src.push(p);
                dst.push([p[0] + f[0], p[1] + f[1]]);
            }
        }
    }
    if src.len() < 3 || collinear(&src) {
        return Err(Error::InsufficientSupport(format!(
            "{} usable pixels under the mask; need at least 3 non-collinear",
            src.len()
        )));
    }
    let n = src.len();
    let k = cfg.model.sample_size();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Matrix3<f64>, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(cfg.max_iterations) {
        iterations += 1;
        let idx = sample(&mut rng, n, k);
        let s: Vec<[f64; 2]> = idx.iter().map(|i| src[i]).collect();
        let d: Vec<[f64; 2]> = idx.iter().map(|i| dst[i]).collect();
        let Some(m) = fit(cfg.model, &s, &d) else {
            continue;
        };
        let count = src
            .iter()
            .zip(&dst)
            .filter(|(p, q)| residual(&m, **p, **q) < cfg.threshold)
            .count();
        if best.as_ref().map_or(true, |b| count > b.1) {
            best = Some((m, count));
            let ratio = count as f64 / n as f64;
            let fail = 1.0 - ratio.powi(k as i32);
            needed = if fail <= f64::EPSILON {
                0
            } else {
                ((1.0 - cfg.confidence).ln() / fail.ln()).ceil().max(1.0) as usize
            };
        }
    }
    let (m, _) = best.ok_or_else(|| {
        Error::InsufficientSupport("no non-degenerate minimal sample found".into())
    })?;
    let (s_in, d_in): (Vec<_>, Vec<_>) = src
        .iter()
        .zip(&dst)
        .filter(|(p, q)| residual(&m, **p, **q) < cfg.threshold)
        .map(|(p, q)| (*p, *q))
        .unzip();
    let refined = fit(cfg.model, &s_in, &d_in).unwrap_or(m);
    let inliers = src
        .iter()
        .zip(&dst)
        .filter(|(p, q)| residual(&refined, **p, **q) < cfg.threshold)
        .count();
    Ok(RansacFit {
        homography: Homography::from_matrix(refined)?,
        inliers,
        inlier_ratio: inliers as f64 / n as f64,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_translation_field() {
        let t = Homography::translation(1.5, -2.0);
        let field = MotionField::from_homography(&t, 20, 16);
        let mut mask = vec![false; 20 * 16];
        for y in 4..12 {
            for x in 5..15 {
                mask[y * 20 + x] = true;
            }
        }
        let fit = ransac_partial_affine(&field, &mask, &RansacConfig::default()).unwrap();
        assert!(fit.homography.max_abs_diff(&t) < 1e-9);
        assert_eq!(fit.inlier_ratio, 1.0);
    }

    #[test]
    fn identity_field() {
        let field = MotionField::from_homography(&Homography::identity(), 12, 10);
        let fit =
            ransac_partial_affine(&field, &vec![true; 120], &RansacConfig::default()).unwrap();
        assert!(fit.homography.max_abs_diff(&Homography::identity()) < 1e-9);
    }

    #[test]
    fn too_few_pixels() {
        let field = MotionField::from_homography(&Homography::identity(), 4, 4);
        let mut mask = vec![false; 16];
        mask[0] = true;
        mask[5] = true;
        assert!(matches!(
            ransac_partial_affine(&field, &mask, &RansacConfig::default()),
            Err(Error::InsufficientSupport(_))
        ));
        // Three collinear pixels are not enough either.
        mask[10] = true;
        assert!(ransac_partial_affine(&field, &mask, &RansacConfig::default()).is_err());
    }

    #[test]
    fn affine_model_recovers_shear() {
        let m = Matrix3::new(1.05, 0.1, 2.0, -0.05, 0.97, 1.0, 0.0, 0.0, 1.0);
        let h = Homography::from_matrix(m).unwrap();
        let field = MotionField::from_homography(&h, 16, 12);
        let cfg = RansacConfig {
            model: MotionModel::Affine,
            ..Default::default()
        };
        let fit = ransac_partial_affine(&field, &vec![true; 192], &cfg).unwrap();
        assert!(fit.homography.max_abs_diff(&h) < 1e-9);
    }
}
