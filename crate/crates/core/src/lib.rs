//! Symbol spotting for raster engineering drawings.
//!
//! The pipeline reads a drawing, finds its table of legends, splits the table
//! into `(symbol, name)` templates, localizes candidate symbols across the
//! drawing and assigns each one to the most similar template (or labels it an
//! outlier) using SIFT keypoint matching.
//!
//! - [`raster`]: images, binarization, line morphology, contours, components.
//! - [`legend`]: legend-table location and row parsing.
//! - [`detect`]: candidate symbol regions and non-maximum suppression.
//! - [`matching`]: SIFT features, the match-count similarity and classifiers.
//! - [`pipeline`]: configuration, end-to-end runs, evaluation and fixtures.

pub mod detect;
pub mod error;
pub mod font;
pub mod legend;
pub mod matching;
pub mod pipeline;
pub mod raster;
pub mod sidecar;

pub use error::{Error, Result};
pub use raster::{BBox, BinaryRaster, Raster};
