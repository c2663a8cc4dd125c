//! Synthetic clips with exact motion and mask labels, a degradation model,
//! and the on-disk dataset format.

mod dataset;
mod degrade;
mod scene;

pub use dataset::{
    read_dataset, read_png, write_dataset, write_png, Clip, ClipEntry, DatasetIndex, Split, SplitIndex, INDEX,
    MANIFEST,
};
pub use degrade::{blur_frame, degrade, motion_kernel, ColorMap, DegradationSpec};
pub use scene::{render_clean_sequence, CleanSequence, MotionSpec, SceneSpec};

use std::path::Path;

use mostnet_autograd::{area_downsample2, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::geometry::{offsets_from_homography, scale_homography, CornerOffsets, FrameSize, Homography};
use crate::{Error, Result};

/// Number of clips per split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub degradation: DegradationSpec,
    pub clips: SplitSizes,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            degradation: DegradationSpec::default(),
            clips: SplitSizes {
                train: 8,
                val: 2,
                test: 2,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.degradation.validate()?;
        if self.clips.train + self.clips.val + self.clips.test == 0 {
            return Err(Error::InvalidConfig("at least one clip is required".into()));
        }
        Ok(())
    }
}

/// Independent seed per clip, mixed from the master seed (splitmix64).
pub fn clip_seed(master: u64, split: Split, index: usize) -> u64 {
    let mut z = master
        .wrapping_add((split as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders and degrades one clip.
pub fn generate_clip(name: &str, scene: &SceneSpec, degradation: &DegradationSpec, seed: u64) -> Result<Clip> {
    let spec = SceneSpec { seed, ..scene.clone() };
    let clean = render_clean_sequence(&spec)?;
    let degraded = degrade(&clean, degradation, seed ^ 0x5EED)?;
    Ok(Clip {
        name: name.to_string(),
        degraded,
        restored: clean.frames,
        masks: clean.masks,
        homographies: clean.homographies,
    })
}

/// All clips of a configuration, in split order.
pub fn generate_clips(cfg: &SynthConfig, master_seed: u64) -> Result<Vec<(Split, Clip)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for split in Split::ALL {
        for i in 0..cfg.clips.get(split) {
            let name = format!("clip_{i:04}");
            let clip = generate_clip(&name, &cfg.scene, &cfg.degradation, clip_seed(master_seed, split, i))?;
            out.push((split, clip));
        }
    }
    Ok(out)
}

/// Generates and writes a dataset. Validation happens before anything is written.
pub fn synthesize_dataset(cfg: &SynthConfig, master_seed: u64, root: &Path) -> Result<DatasetIndex> {
    let clips = generate_clips(cfg, master_seed)?;
    write_dataset(root, &clips)
}

/// Ground truth for one batched step at one scale.
#[derive(Clone, Debug)]
pub struct FrameLabels<T: Scalar> {
    /// `[N, 3, H, W]`.
    pub restored: Tensor<T>,
    /// `[N, 1, H, W]`, binary.
    pub mask: Tensor<T>,
    pub homographies: Vec<Homography>,
    pub offsets: Vec<CornerOffsets>,
}

impl<T: Scalar> FrameLabels<T> {
    /// Labels at full resolution; offsets are derived from the homographies.
    pub fn new(restored: Tensor<T>, mask: Tensor<T>, homographies: Vec<Homography>) -> Result<Self> {
        let (n, c, h, w) = restored.dims4();
        let (mn, mc, mh, mw) = mask.dims4();
        if c != 3 || (mn, mc, mh, mw) != (n, 1, h, w) || homographies.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "labels: restored {:?}, mask {:?}, {} homographies",
                restored.shape(),
                mask.shape(),
                homographies.len()
            )));
        }
        let size = FrameSize::new(w, h);
        let offsets = homographies.iter().map(|hm| offsets_from_homography(hm, size)).collect();
        Ok(Self {
            restored,
            mask,
            homographies,
            offsets,
        })
    }

    pub fn frame_size(&self) -> FrameSize {
        let (_, _, h, w) = self.restored.dims4();
        FrameSize::new(w, h)
    }
}

/// Labels at scale `s`: frames and masks area-downsampled `s - 1` times (masks
/// re-binarized at 0.5), homographies conjugated by `diag(2^(1-s), 2^(1-s), 1)`,
/// offsets recomputed at the scale-`s` corners.
pub fn gt_labels_at_scale<T: Scalar>(labels: &FrameLabels<T>, s: usize) -> FrameLabels<T> {
    assert!((1..=3).contains(&s), "scale must be 1, 2 or 3");
    if s == 1 {
        return labels.clone();
    }
    let mut restored = labels.restored.clone();
    let mut mask = labels.mask.clone();
    for _ in 1..s {
        restored = area_downsample2(&restored);
        mask = area_downsample2(&mask);
    }
    let half = T::of(0.5);
    mask = mask.map(|v| if v >= half { T::one() } else { T::zero() });
    let factor = 0.5f64.powi(s as i32 - 1);
    let homographies: Vec<Homography> = labels.homographies.iter().map(|h| scale_homography(h, factor)).collect();
    let size = labels.frame_size().at_scale(s);
    let offsets = homographies.iter().map(|h| offsets_from_homography(h, size)).collect();
    FrameLabels {
        restored,
        mask,
        homographies,
        offsets,
    }
}

/// Labels at scales 1, 2, 3 (index `s - 1`).
pub fn label_pyramid<T: Scalar>(labels: &FrameLabels<T>) -> Vec<Option<FrameLabels<T>>> {
    (1..=3).map(|s| Some(gt_labels_at_scale(labels, s))).collect()
}
