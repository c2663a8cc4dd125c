//! Multi-output, multi-scale, multi-task video enhancement: joint frame
//! restoration, object segmentation and inter-frame homography estimation.

mod error;
pub mod geometry;

pub use error::{Error, Result};
pub mod blocks;
pub mod mostnet;
pub mod losses;
pub mod synthdata;
pub mod metrics;
pub mod training;
