use serde::{Deserialize, Serialize};

use crate::blocks::BlockConfig;
use crate::{Error, Result};

/// Architecture variants used in the diagnostics study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Ablation {
    /// Complete model.
    #[default]
    Full,
    /// No segmentation heads; motion gating uses an all-ones mask.
    Ns,
    /// Motion-gated attention ignores encoder features.
    Ne,
    /// Previous encoder features are fused without alignment.
    Nw,
    /// Task outputs only at full resolution; no cross-scale propagation.
    Nmo,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Full, Ablation::Ns, Ablation::Ne, Ablation::Nw, Ablation::Nmo];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "FULL",
            Ablation::Ns => "NS",
            Ablation::Ne => "NE",
            Ablation::Nw => "NW",
            Ablation::Nmo => "NMO",
        }
    }

    pub fn has_segmentation(self) -> bool {
        self != Ablation::Ns
    }

    pub fn multi_output(self) -> bool {
        self != Ablation::Nmo
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation {s:?}")))
    }
}

/// Which offset-regressor blocks survive at the coarser scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorCrop {
    /// Drop the first `s - 1` blocks: `(128, 256, 256, 256)` at s=2.
    #[default]
    DropLeading,
    /// Drop the last `s - 1` blocks: `(64, 128, 256, 256)` at s=2.
    DropTrailing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub scales: usize,
    /// Encoder width at full resolution; doubles with every coarser scale.
    pub base_channels: usize,
    pub enc_res_blocks: usize,
    pub use_fft_branch: bool,
    pub ablation: Ablation,
    pub input_height: usize,
    pub input_width: usize,
    /// Offset-regressor widths at full resolution.
    pub regressor_widths: Vec<usize>,
    pub regressor_crop: RegressorCrop,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-size architecture.
    pub fn paper() -> Self {
        Self {
            scales: 3,
            base_channels: 32,
            enc_res_blocks: 5,
            use_fft_branch: true,
            ablation: Ablation::Full,
            input_height: 320,
            input_width: 416,
            regressor_widths: vec![64, 128, 256, 256, 256],
            regressor_crop: RegressorCrop::DropLeading,
            seed: 0,
        }
    }

    /// Reduced widths for CPU-scale experiments on 64x80 frames.
    pub fn desk() -> Self {
        Self {
            base_channels: 8,
            enc_res_blocks: 2,
            input_height: 64,
            input_width: 80,
            regressor_widths: vec![16, 32, 64, 64, 64],
            ..Self::paper()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales != 3 {
            return Err(Error::InvalidConfig(format!("scales must be 3, got {}", self.scales)));
        }
        if self.base_channels < 2 {
            return Err(Error::InvalidConfig("base_channels must be at least 2".into()));
        }
        if self.regressor_widths.len() < self.scales || self.regressor_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "regressor_widths needs at least {} positive entries",
                self.scales
            )));
        }
        self.check_input_size(self.input_height, self.input_width)
    }

    pub fn divisor(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn check_input_size(&self, height: usize, width: usize) -> Result<()> {
        let d = self.divisor();
        if height == 0 || width == 0 || height % d != 0 || width % d != 0 {
            return Err(Error::SizeNotDivisible { height, width, divisor: d });
        }
        Ok(())
    }

    /// Encoder widths at scales 1, 2, 3.
    pub fn encoder_widths(&self) -> [usize; 3] {
        let b = self.base_channels;
        [b, 2 * b, 4 * b]
    }

    pub fn encoder_block(&self, s: usize) -> BlockConfig {
        let w = self.encoder_widths();
        BlockConfig {
            in_channels: if s == 1 { 3 } else { w[s - 2] },
            out_channels: w[s - 1],
            n_res_blocks: self.enc_res_blocks,
            use_fft_branch: self.use_fft_branch,
        }
    }

    pub fn regressor_widths_at(&self, s: usize) -> Vec<usize> {
        let w = &self.regressor_widths;
        match self.regressor_crop {
            RegressorCrop::DropLeading => w[s - 1..].to_vec(),
            RegressorCrop::DropTrailing => w[..w.len() - (s - 1)].to_vec(),
        }
    }

    /// Scales with task outputs, coarsest first.
    pub fn output_scales(&self) -> Vec<usize> {
        if self.ablation.multi_output() {
            vec![3, 2, 1]
        } else {
            vec![1]
        }
    }
}
