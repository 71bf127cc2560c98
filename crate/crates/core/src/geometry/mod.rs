//! Camera poses, pinhole projection, scene-coordinate maps and closed-form
//! alignment.
//!
//! Extrinsics are world-to-camera throughout: `x_cam = R * x_world + t`.

mod align;
mod camera;
mod dense;
mod normalize;
mod pose;
mod quaternion;
mod tum;

pub use align::{umeyama, Similarity};
pub use camera::{project, unproject, Intrinsics, Resolution};
pub use dense::{pose_from_scm, scm_from_depth, DenseOutput};
pub use normalize::{mean_reference_distance, normalize_scene, NormalizedScene};
pub use pose::{decode_pose, encode_pose, CameraPose, PoseEncoding, FOV_EPS};
pub use quaternion::Quaternion;
pub(crate) use quaternion::canonical_sign;
pub use tum::{read_tum, write_tum, TumEntry};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("insufficient correspondences: {found} usable, need at least 3")]
    InsufficientCorrespondences { found: usize },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
    #[error("trajectory line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
