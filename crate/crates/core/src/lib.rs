//! Semantic structure-from-motion: reconstruct a point cloud from a nadir
//! image survey and carry per-pixel segmentation labels into it.
//!
//! The pipeline detects features, matches every image pair, drops matches
//! whose labels disagree (unless too few agree), verifies pairs with an
//! essential-matrix RANSAC, grows an incremental reconstruction with bundle
//! adjustment, and finally votes a label and confidence for every point from
//! the label rasters of the images that see it.
//!
//! A procedural forest scene generator with exact ground truth lives in
//! [`scene`].

// NaN must fail range checks, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod features;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod reconstruct;
pub mod scene;
pub mod semantics;
pub mod synthetic;

pub use config::{ConfigError, PipelineConfig};
pub use features::{Feature, Match, MatchSet};
pub use geometry::{CameraIntrinsics, GeometryError, Observation, Pose};
pub use imaging::{ClassId, ImageError, LabelImage, LabelPalette, RgbImage};
pub use io::{IoError, PlyCloud, PlyEncoding};
pub use reconstruct::{ReconstructError, Reconstruction, SfmOutput, SfmReport, Track};
pub use scene::{Dataset, GroundControlPoint, SceneDescription, SceneError, SceneParams};
pub use semantics::{LabeledPoint, OobVotes, SemanticsError};

/// Crate version, recorded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
