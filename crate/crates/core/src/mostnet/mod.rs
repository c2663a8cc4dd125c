//! The assembled network: twin encoders, aligned temporal fusion, coarse-to-fine
//! decoding with cross-scale output propagation and a homography cascade.

mod config;
mod model;

pub use config::{Ablation, ModelConfig, RegressorCrop};
pub use model::{
    count_parameters, GraphState, MostNet, PyramidOutputs, RecurrentState, ScaleNodes, ScaleOutput, StepNodes,
    VideoRun,
};
