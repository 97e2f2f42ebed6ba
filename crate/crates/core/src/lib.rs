//! Calibrated camera degradations for RAW super-resolution data.
//!
//! The crate measures device-specific super-resolution blur kernels and
//! heteroscedastic sensor noise from display captures, and uses them to turn
//! linear RGB images into low-resolution mosaicked RAW training pairs. An
//! evaluation module measures Siemens-star MTF and reference metrics.

pub mod alignment;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod io;
pub mod kernel;
pub mod noise;
pub mod patterns;
pub mod radiometric;
pub mod synthesis;

pub use error::{Error, Result};
pub use image::{CameraProfile, CfaChannel, CfaPattern, LinearRgbImage, Plane, RawData, RawFrame, RawMeta};
