//! Display ↔ sensor geometry: Gray-code decoding, homography fitting,
//! differentiable warping and reference alignment for paired evaluation.

pub mod graycode;
pub mod homography;
pub mod reference;
pub mod warp;

pub use graycode::{decode_gray_code, DecodeOptions, Threshold};
pub use homography::{fit_homography, Correspondence, CorrespondenceSet, Homography, HomographyFit, RansacOptions};
pub use reference::{align_reference, histogram_match, resize_bicubic, AlignedReference, Roi};
pub use warp::{bilinear_with_grad, warp, warp_plane, warp_plane_jacobian, InverseMap, WarpOutput};
