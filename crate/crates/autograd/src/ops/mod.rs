mod conv;
mod elementwise;
mod fft;
pub(crate) mod norm;
pub(crate) mod pool;
mod sample;
mod shape;

pub use conv::{conv2d_output_size, conv_transpose2d_output_size};
pub use sample::SampleGrid;
