use mostnet_autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::CleanSequence;
use crate::{Error, Result};

/// Per-channel `clamp(gain * c + bias)^gamma`, turning vivid colors pale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorMap {
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    pub gamma: [f64; 3],
}

impl ColorMap {
    pub fn identity() -> Self {
        Self {
            gain: [1.0; 3],
            bias: [0.0; 3],
            gamma: [1.0; 3],
        }
    }

    pub fn pale() -> Self {
        Self {
            gain: [0.7, 0.75, 0.8],
            bias: [0.18, 0.16, 0.14],
            gamma: [1.1, 1.0, 0.9],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn apply(&self, frame: &Tensor<f32>) -> Tensor<f32> {
        if self.is_identity() {
            return frame.clone();
        }
        let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
        let plane = h * w;
        let mut out = frame.clone();
        for ch in 0..c {
            let k = ch % 3;
            for v in &mut out.data_mut()[ch * plane..(ch + 1) * plane] {
                let x = (self.gain[k] * *v as f64 + self.bias[k]).clamp(0.0, 1.0);
                *v = x.powf(self.gamma[k]) as f32;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationSpec {
    /// Odd side length of the per-pixel blur kernels.
    pub kernel_size: usize,
    /// Fraction of the inter-frame displacement covered by the blur streak.
    pub exposure: f64,
    /// Additive Gaussian noise standard deviation.
    pub eta: f64,
    /// Gain of the signal-dependent noise, `gain * sqrt(intensity) * N(0, 1)`.
    pub sigma_gain: f64,
    pub color_map: ColorMap,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            kernel_size: 5,
            exposure: 1.0,
            eta: 0.01,
            sigma_gain: 0.01,
            color_map: ColorMap::pale(),
        }
    }
}

impl DegradationSpec {
    /// No blur, noise or color change.
    pub fn identity() -> Self {
        Self {
            kernel_size: 1,
            exposure: 1.0,
            eta: 0.0,
            sigma_gain: 0.0,
            color_map: ColorMap::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("degradation: {m}")));
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return bad("kernel_size must be odd");
        }
        if !(self.eta >= 0.0 && self.sigma_gain >= 0.0 && self.exposure >= 0.0) {
            return bad("eta, sigma_gain and exposure must be nonnegative");
        }
        let cm = &self.color_map;
        if cm.gamma.iter().any(|g| *g <= 0.0) {
            return bad("color gamma must be positive");
        }
        Ok(())
    }
}

/// Normalized `K x K` linear motion kernel for displacement `v = (vx, vy)`.
///
/// `K` samples spread evenly along the segment from `-v/2` to `+v/2` are
/// splatted bilinearly into the grid (clamped to the window) and the weights
/// normalized to sum 1. Row-major, `kernel[(dy + r) * K + (dx + r)]`.
pub fn motion_kernel(k: usize, v: [f64; 2]) -> Vec<f64> {
    let r = (k / 2) as f64;
    let mut ker = vec![0.0; k * k];
    let n = k.max(2);
    for j in 0..k {
        let t = if k == 1 { 0.0 } else { j as f64 / (n - 1) as f64 - 0.5 };
        let ox = (t * v[0]).clamp(-r, r) + r;
        let oy = (t * v[1]).clamp(-r, r) + r;
        let (x0, y0) = (ox.floor(), oy.floor());
        let (fx, fy) = (ox - x0, oy - y0);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (xi, yi) = (x0 as usize + dx, y0 as usize + dy);
                let wgt = wx * wy;
                if wgt > 0.0 && xi < k && yi < k {
                    ker[yi * k + xi] += wgt;
                }
            }
        }
    }
    let s: f64 = ker.iter().sum();
    ker.iter_mut().for_each(|w| *w /= s);
    ker
}

/// Applies a per-pixel motion kernel built from the `[2, H, W]` velocity field.
/// Out-of-frame taps replicate the border.
pub fn blur_frame(frame: &Tensor<f32>, velocity: &Tensor<f32>, k: usize, exposure: f64) -> Tensor<f32> {
    if k == 1 {
        return frame.clone();
    }
    let (c, h, w) = (frame.shape()[0], frame.shape()[1], frame.shape()[2]);
    let plane = h * w;
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&[c, h, w]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let v = [
                velocity.data()[i] as f64 * exposure,
                velocity.data()[plane + i] as f64 * exposure,
            ];
            if v == [0.0, 0.0] {
                for ch in 0..c {
                    out.data_mut()[ch * plane + i] = frame.data()[ch * plane + i];
                }
                continue;
            }
            let ker = motion_kernel(k, v);
            for ch in 0..c {
                let src = &frame.data()[ch * plane..(ch + 1) * plane];
                let mut acc = 0.0;
                for ky in 0..k {
                    let yy = (y as isize + ky as isize - r).clamp(0, h as isize - 1) as usize;
                    for kx in 0..k {
                        let wgt = ker[ky * k + kx];
                        if wgt != 0.0 {
                            let xx = (x as isize + kx as isize - r).clamp(0, w as isize - 1) as usize;
                            acc += wgt * src[yy * w + xx] as f64;
                        }
                    }
                }
                out.data_mut()[ch * plane + i] = acc as f32;
            }
        }
    }
    out
}

/// Degraded frames: color map, motion blur along the ground-truth motion,
/// signal-dependent plus additive Gaussian noise, clamp to `[0, 1]`.
pub fn degrade(seq: &CleanSequence, spec: &DegradationSpec, seed: u64) -> Result<Vec<Tensor<f32>>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(seq.frames.len());
    for (frame, vel) in seq.frames.iter().zip(&seq.velocities) {
        let mapped = spec.color_map.apply(frame);
        let mut b = blur_frame(&mapped, vel, spec.kernel_size, spec.exposure);
        for v in b.data_mut() {
            let n1: f64 = StandardNormal.sample(&mut rng);
            let n2: f64 = StandardNormal.sample(&mut rng);
            let x = *v as f64;
            let y = x + spec.sigma_gain * x.max(0.0).sqrt() * n1 + spec.eta * n2;
            *v = y.clamp(0.0, 1.0) as f32;
        }
        out.push(b);
    }
    Ok(out)
}
