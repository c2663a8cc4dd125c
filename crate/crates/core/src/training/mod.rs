//! Optimization loop, augmentation, checkpoints and evaluation.

mod checkpoint;
mod evaluate;
mod trainer;

pub use checkpoint::{config_fingerprint, AdamState, Checkpoint};
pub use evaluate::{
    evaluate, oracle_prediction, predict_clip, score, ClipPrediction, Evaluation, ScaleRow, ScaleTrack,
};
pub use trainer::{RunOptions, StepRecord, TrainReport, Trainer};

use mostnet_autograd::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{FrameSize, Homography};
use crate::losses::{LossWeights, CHARBONNIER_EPS};
use crate::synthdata::Clip;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip_h: f64,
    pub flip_v: f64,
    /// Per-channel multiplicative factors are drawn from `[1 - a, 1 + a]`.
    pub channel_perturb: f64,
    /// Brightness, contrast and saturation jitter amplitude.
    pub color_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_h: 0.5,
            flip_v: 0.5,
            channel_perturb: 0.1,
            color_jitter: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip_h: 0.0,
            flip_v: 0.0,
            channel_perturb: 0.0,
            color_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Total optimizer steps of the cosine schedule.
    pub steps: u64,
    /// Frames per training window (the first one is the cold start).
    pub unroll_length: usize,
    pub weights: LossWeights,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub grad_clip: f64,
    pub charbonnier_eps: f64,
    pub log_every: u64,
    /// Validation period in steps (0 disables).
    pub val_every: u64,
    /// Checkpoint period in steps (0 writes only the final checkpoint).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr_start: 1e-4,
            lr_end: 1e-6,
            steps: 100_000,
            unroll_length: 4,
            weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            grad_clip: 1.0,
            charbonnier_eps: CHARBONNIER_EPS,
            log_every: 10,
            val_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self::default()
    }

    /// Short CPU runs on 64x80 clips. The restoration and segmentation
    /// weights are the defaults multiplied by the per-frame element counts
    /// (3*64*80 and 64*80), since the losses here are per-element means.
    pub fn desk() -> Self {
        Self {
            batch_size: 2,
            lr_start: 2e-3,
            lr_end: 1e-5,
            steps: 800,
            weights: LossWeights::new(2e-4 * 15360.0, 5e-5 * 5120.0, 1.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("train: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr_end >= 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return bad(format!("need 0 <= lr_end <= lr_start, got {} and {}", self.lr_end, self.lr_start));
        }
        if self.unroll_length < 2 {
            return bad("unroll_length must be at least 2".into());
        }
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.grad_clip <= 0.0 || self.charbonnier_eps <= 0.0 {
            return bad("grad_clip and charbonnier_eps must be positive".into());
        }
        let a = &self.augment;
        if ![a.flip_h, a.flip_v].iter().all(|p| (0.0..=1.0).contains(p))
            || !(0.0..1.0).contains(&a.channel_perturb)
            || !(0.0..1.0).contains(&a.color_jitter)
        {
            return bad("augmentation probabilities must lie in [0, 1] and amplitudes in [0, 1)".into());
        }
        self.weights.validate()
    }
}

/// Cosine annealing from `start` at step 0 to `end` at step `total`.
pub fn cosine_lr(step: u64, total: u64, start: f64, end: f64) -> f64 {
    if step == 0 {
        return start;
    }
    if step >= total {
        return end;
    }
    let x = step as f64 / total as f64;
    end + 0.5 * (start - end) * (1.0 + (std::f64::consts::PI * x).cos())
}

/// Consecutive frames of one clip with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub degraded: Vec<Tensor<f32>>,
    pub restored: Vec<Tensor<f32>>,
    pub masks: Vec<Tensor<f32>>,
    /// `homographies[i]` maps frame `i` to frame `i + 1`.
    pub homographies: Vec<Homography>,
}

impl Sample {
    pub fn window(clip: &Clip, start: usize, len: usize) -> Sample {
        Sample {
            degraded: clip.degraded[start..start + len].to_vec(),
            restored: clip.restored[start..start + len].to_vec(),
            masks: clip.masks[start..start + len].to_vec(),
            homographies: clip.homographies[start..start + len - 1].to_vec(),
        }
    }

    pub fn frame_size(&self) -> FrameSize {
        let s = self.restored[0].shape();
        FrameSize::new(s[2], s[1])
    }
}

fn flip(t: &Tensor<f32>, fx: bool, fy: bool) -> Tensor<f32> {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    Tensor::from_fn(s, |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (sy, sx) = (if fy { h - 1 - y } else { y }, if fx { w - 1 - x } else { x });
        t.data()[(ch * h + sy) * w + sx]
    })
    .reshape(&[c, h, w])
}

fn photometric(t: &Tensor<f32>, gains: [f32; 3], brightness: f32, contrast: f32, saturation: f32) -> Tensor<f32> {
    let s = t.shape();
    let plane = s[1] * s[2];
    let mean = t.data().iter().sum::<f32>() / t.numel() as f32;
    let mut out = t.clone();
    let d = out.data_mut();
    for i in 0..plane {
        let mut px = [0f32; 3];
        for c in 0..3 {
            px[c] = d[c * plane + i] * gains[c];
        }
        let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
        for c in 0..3 {
            let v = gray + saturation * (px[c] - gray);
            let v = mean + contrast * (v - mean) + brightness;
            d[c * plane + i] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Random flips applied consistently to frames, masks and homographies
/// (conjugated by the reflection), plus channel perturbation and color
/// jitter applied to the degraded frames only.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let fx = cfg.flip_h > 0.0 && rng.gen_bool(cfg.flip_h);
    let fy = cfg.flip_v > 0.0 && rng.gen_bool(cfg.flip_v);
    let mut out = sample.clone();
    if fx || fy {
        let size = sample.frame_size();
        for t in out
            .degraded
            .iter_mut()
            .chain(out.restored.iter_mut())
            .chain(out.masks.iter_mut())
        {
            *t = flip(t, fx, fy);
        }
        for h in &mut out.homographies {
            *h = h.reflected(size, fx, fy);
        }
    }
    let sym = |rng: &mut dyn rand::RngCore, a: f64| if a > 0.0 { rng.gen_range(-a..a) as f32 } else { 0.0 };
    let cp = cfg.channel_perturb;
    let gains = [1.0 + sym(rng, cp), 1.0 + sym(rng, cp), 1.0 + sym(rng, cp)];
    let cj = cfg.color_jitter;
    let (b, c, s) = (sym(rng, cj), 1.0 + sym(rng, cj), 1.0 + sym(rng, cj));
    if cp > 0.0 || cj > 0.0 {
        for t in &mut out.degraded {
            *t = photometric(t, gains, b, c, s);
        }
    }
    out
}

/// Mixes two integers into a well-spread seed.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
