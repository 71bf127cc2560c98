//! Pose accuracy metrics: pairwise relative rotation and translation-direction
//! accuracy, their area-under-curve summary, and aligned trajectory error.

mod metrics;
mod report;
mod trajectory;

pub use metrics::{
    ate_rmse, maa, pair_errors, relative_rotation_angle, rms_spread, rra_rta, umeyama_align, Alignment, PairError,
    MIN_BASELINE,
};
pub use report::{evaluate, MetricsReport, DEFAULT_THRESHOLDS};
pub use trajectory::{match_frames, Trajectory};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need at least {needed} frames, found {found}")]
    InsufficientFrames { found: usize, needed: usize },
    #[error("duplicate frame id {0:?}")]
    DuplicateId(String),
    #[error("frames missing from the estimate: {}", .0.join(", "))]
    MissingFrames(Vec<String>),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
