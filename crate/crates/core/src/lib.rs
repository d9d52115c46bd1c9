//! Detection of solar modules and their cell crossing lattice in
//! electroluminescence images.
//!
//! The detector works almost entirely on 1-D statistics: the image is summed
//! along rows and columns, the module is located from extrema of the smoothed
//! gradients of those sums, and every cell crossing is then refined on a
//! small rectified patch using the same kind of statistics. A robust
//! homography fit over the refined crossings gives the final model-to-image
//! map.
//!
//! ```no_run
//! use elgrid::{detect, load_image, DetectorConfig};
//!
//! let img = load_image("module.png").unwrap();
//! let result = detect(&img, 10, 6, &DetectorConfig::default()).unwrap();
//! println!("corners: {:?}", result.corners);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod crossing;
pub mod detection;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod overlay;
pub mod pipeline;
pub mod ransac;
pub mod schema;
pub mod signal;
pub mod synth;

pub use crate::config::DetectorConfig;
pub use crate::geometry::{Correspondence, GeometryError, Homography, ModelGrid, Point};
pub use crate::image::{load_image, GrayImage, ImageError};
pub use crate::pipeline::{detect, extract_cells, DetectionResult, PipelineError, Stage};
pub use crate::signal::{Axis, Signal1D};
