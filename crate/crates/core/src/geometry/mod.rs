//! Homography algebra, four-point parameterization, warping and robust
//! motion fitting.

mod homography;
mod io;
mod ransac;
mod warp;

pub(crate) use homography::four_point_solve;
pub use homography::{
    check_quadrilateral, compose, dlt_solve, mace, offsets_from_homography, scale_homography,
    CornerOffsets, FrameSize, Homography,
};
pub use io::{
    format_homographies, format_homography, parse_homographies, parse_homography,
    read_homographies, write_homographies,
};
pub use ransac::{ransac_partial_affine, MotionField, MotionModel, RansacConfig, RansacFit};
pub use warp::{valid_preimage_mask, warp, warp_grid};
