//! Static-background disparity estimation and dynamic-object removal for
//! light fields captured by a calibrated linear camera array.
//!
//! A frame is `K` grayscale views plus per-view probabilities that a pixel
//! belongs to a moving object. The reference view is camera 0. The pipeline
//! matches sparse support points, triangulates them into a piecewise-planar
//! disparity prior, picks the MAP disparity of every reference pixel from the
//! variance of the rays that hit static pixels, optionally re-estimates the
//! labels, and averages the static rays of every dynamic reference pixel into
//! an image of the background behind it.

pub mod config;
pub mod descriptor;
pub mod disparity;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod refocus;
pub mod scalar;
pub mod segmentation;
pub mod support_mesh;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{Image, Raster};
pub use scalar::Scalar;

/// Double-precision camera.
pub type Camera = geometry::Camera<f64>;
/// Double-precision rig; the precision used by the pipeline.
pub type CameraRig = geometry::CameraRig<f64>;
/// Single-precision rig.
pub type CameraRig32 = geometry::CameraRig<f32>;
pub type PixelCoord = geometry::PixelCoord<f64>;
pub type Homography = geometry::Homography<f64>;
pub type RayWarper = geometry::RayWarper<f64>;
