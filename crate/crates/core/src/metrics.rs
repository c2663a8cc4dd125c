//! Evaluation metrics: PSNR, SSIM, IoU, corner error, temporal warping error
//! and throughput.

use std::time::Instant;

use mostnet_autograd::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::geometry::{valid_preimage_mask, warp, FrameSize, Homography};
use crate::mostnet::MostNet;
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Summary metrics of one evaluation run. `iou` is absent for models without
/// segmentation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mace_px: f64,
    pub iou: Option<f64>,
    pub ew: f64,
    pub fps: f64,
    pub n_frames: usize,
}

fn check_same(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// `10 log10(1 / MSE)`, capped at 100 dB.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_same(pred.shape(), gt.shape())?;
    let mse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / pred.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..n).map(|i| k[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..n).map(|i| k[i] * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, dynamic range 1) over
/// valid window positions, averaged over channels. Leading dimensions are
/// treated as channels.
pub fn ssim<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    check_same(pred.shape(), gt.shape())?;
    let s = pred.shape();
    if s.len() < 2 {
        return Err(Error::ShapeMismatch(format!("ssim needs an image, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let plane = h * w;
    let channels = pred.numel() / plane;
    let mut total = 0.0;
    for c in 0..channels {
        let a: Vec<f64> = pred.data()[c * plane..(c + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = gt.data()[c * plane..(c + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(&a, h, w, &k);
        let mu_b = filter_valid(&b, h, w, &k);
        let aa = filter_valid(&prod(&a, &a), h, w, &k);
        let bb = filter_valid(&prod(&b, &b), h, w, &k);
        let ab = filter_valid(&prod(&a, &b), h, w, &k);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / channels as f64)
}

/// Intersection over union of `pred > threshold` with the binary ground truth.
/// Two empty masks give 1.
pub fn iou<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, threshold: f64) -> Result<f64> {
    check_same(pred.shape(), gt.shape())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p.as_f64() > threshold, g.as_f64() >= 0.5);
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean absolute difference between `R_t` and `warp(R_{t-1}, H_{t-1->t})`
/// over pixels whose pre-image lies inside the frame, averaged over pairs.
/// With `masks`, pixels are further restricted to `M_t = 1`, the region the
/// homographies describe. Frames are `[C, H, W]`.
pub fn temporal_warp_error<T: Scalar>(
    restored: &[Tensor<T>],
    homographies: &[Homography],
    masks: Option<&[Tensor<T>]>,
) -> Result<f64> {
    if restored.len() < 2 || homographies.len() + 1 != restored.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} frames need {} homographies, got {}",
            restored.len(),
            restored.len().saturating_sub(1),
            homographies.len()
        )));
    }
    if masks.is_some_and(|m| m.len() != restored.len()) {
        return Err(Error::ShapeMismatch("one mask per frame is required".into()));
    }
    let s = restored[0].shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let mut total = 0.0;
    for t in 1..restored.len() {
        check_same(restored[t].shape(), s)?;
        let warped = warp(&restored[t - 1], &homographies[t - 1]);
        let valid = valid_preimage_mask(&homographies[t - 1], FrameSize::new(w, h));
        let (mut acc, mut count) = (0.0, 0usize);
        for (i, &ok) in valid.iter().enumerate() {
            let inside = masks.map_or(true, |m| m[t].data()[i].as_f64() >= 0.5);
            if !ok || !inside {
                continue;
            }
            for ch in 0..c {
                let k = ch * plane + i;
                acc += (restored[t].data()[k].as_f64() - warped.data()[k].as_f64()).abs();
            }
            count += c;
        }
        total += if count > 0 { acc / count as f64 } else { 0.0 };
    }
    Ok(total / (restored.len() - 1) as f64)
}

/// Steady-state frames per second of streaming `frames` through the model,
/// excluding the first `warmup` steps.
pub fn measure_fps<T: Scalar>(model: &MostNet<T>, frames: &[Tensor<T>], warmup: usize) -> Result<f64> {
    if frames.len() < warmup + 10 {
        return Err(Error::InvalidConfig(format!(
            "fps measurement needs at least {} frames",
            warmup + 10
        )));
    }
    let mut state = model.init_state(&frames[0])?;
    let mut start = Instant::now();
    for (i, frame) in frames[1..].iter().enumerate() {
        if i == warmup {
            start = Instant::now();
        }
        state = model.forward(&state, frame)?.1;
    }
    let steps = frames.len() - 1 - warmup;
    Ok(steps as f64 / start.elapsed().as_secs_f64().max(1e-9))
}
