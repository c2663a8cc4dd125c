//! Run configuration: profile defaults, overlaid by a TOML file, overlaid by flags.

use std::path::Path;

use mostnet_core::mostnet::ModelConfig;
use mostnet_core::synthdata::{DegradationSpec, SceneSpec, Split, SplitSizes, SynthConfig};
use mostnet_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// 64x80 clips and reduced widths for CPU runs.
    Desk,
    /// Full-size architecture on 320x416 frames.
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    /// Also write degraded | restored | ground-truth frame strips.
    pub side_by_side: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            side_by_side: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for data synthesis, initialization and training.
    pub seed: u64,
    pub scene: SceneSpec,
    pub degradation: DegradationSpec,
    pub clips: SplitSizes,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn profile(p: Profile) -> Self {
        let synth = SynthConfig::default();
        match p {
            Profile::Desk => Self {
                seed: 0,
                scene: synth.scene,
                degradation: synth.degradation,
                clips: synth.clips,
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                eval: EvalSection::default(),
            },
            Profile::Paper => Self {
                seed: 0,
                scene: SceneSpec {
                    width: 416,
                    height: 320,
                    object_radius: [70.0, 100.0],
                    ..synth.scene
                },
                degradation: synth.degradation,
                clips: SplitSizes {
                    train: 300,
                    val: 29,
                    test: 80,
                },
                model: ModelConfig::paper(),
                train: TrainConfig::paper(),
                eval: EvalSection::default(),
            },
        }
    }

    /// Profile defaults overlaid with the file at `path`. Also returns the
    /// top-level sections the file sets.
    pub fn load(p: Profile, path: Option<&Path>) -> Result<(Self, Vec<String>), CliError> {
        let base = Self::profile(p);
        let Some(path) = path else {
            return Ok((base, Vec::new()));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let file: Value = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let sections = file
            .as_table()
            .map(|t| t.keys().cloned().collect())
            .unwrap_or_default();
        let mut merged = Value::try_from(&base).expect("defaults serialize");
        overlay(&mut merged, file);
        let cfg: Self = merged
            .try_into()
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Ok((cfg, sections))
    }

    /// Sets the master seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            scene: self.scene.clone(),
            degradation: self.degradation.clone(),
            clips: self.clips,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Recursive table merge. A table carrying a `kind` tag replaces the base
/// table outright, since its fields depend on the variant.
fn overlay(base: &mut Value, file: Value) {
    match (base, file) {
        (Value::Table(b), Value::Table(f)) => {
            for (k, v) in f {
                match b.get_mut(&k) {
                    Some(slot) if v.as_table().is_some_and(|t| !t.contains_key("kind")) => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, f) => *b = f,
    }
}
