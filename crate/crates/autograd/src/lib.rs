//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! A [`Graph`] records ops eagerly; [`Graph::backward`] produces gradients
//! for parameters bound from a [`ParamStore`] and for free leaves.

pub mod gradcheck;
mod graph;
pub mod init;
mod ops;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use graph::{BackwardFn, Gradients, Graph, Mode, Var};
pub use ops::{conv2d_output_size, conv_transpose2d_output_size, SampleGrid};
pub use ops::norm::BatchNormParams;
pub use ops::pool::{area_downsample2, upsample_bilinear2};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use scalar::{matmul, Scalar};
pub use tensor::Tensor;
