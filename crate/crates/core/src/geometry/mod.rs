//! Camera model and multi-view geometry.

pub mod bundle;
pub mod camera;
pub mod epipolar;
pub mod ransac;
pub mod resection;
pub mod similarity;
pub mod triangulation;

use thiserror::Error;

pub use bundle::{bundle_adjust, BundleConfig, BundleProblem, BundleReport};
pub use camera::{project, rotation_angle_between, CameraIntrinsics, Observation, Pose};
pub use epipolar::{estimate_relative_pose, relative_pose_from_points, RelativePose};
pub use ransac::RansacParams;
pub use resection::{resect, Resection, ResectionParams};
pub use similarity::{align_to_gcps, umeyama, GcpAlignment, GcpResidual, Similarity};
pub use triangulation::{triangulate, TriangulationParams};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("need at least {need} correspondences, got {got}")]
    TooFewCorrespondences { need: usize, got: usize },
    #[error("image pair rejected: best model has {inliers} inliers")]
    PairRejected { inliers: usize },
    #[error("low parallax: {degrees:.3} degrees")]
    LowParallax { degrees: f64 },
    #[error("triangulated point is behind a camera")]
    BehindCamera,
    #[error("reprojection error {max_px:.3} px exceeds gate")]
    ReprojectionGate { max_px: f64 },
    #[error("resection failed with {inliers} inliers")]
    ResectionFailed { inliers: usize },
    #[error("non-finite cost at iteration {iteration}")]
    NumericalFailure { iteration: usize },
    #[error("alignment failed: {0}")]
    AlignmentFailed(String),
    #[error("bundle adjustment needs {0}")]
    InvalidProblem(String),
}
