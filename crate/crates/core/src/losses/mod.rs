//! Training objective: L1 pose loss plus confidence-weighted depth and
//! scene-coordinate losses with an image-gradient term, and a central
//! difference gradient checker.

mod gradcheck;
mod graph;
mod terms;

pub use gradcheck::{grad_check, relative_error, GradCheck, GRAD_CHECK_FLOOR};
pub use graph::{graph_loss, FrameTarget};
pub use terms::{
    camera_loss, camera_loss_grad, confidence_l1, depth_loss, depth_loss_grad, scm_loss,
    scm_loss_grad, DenseTerm,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DenseOutput, PoseEncoding};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("no valid pixels to supervise")]
    EmptySupervision,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the `-ln C` confidence regularizer.
    pub alpha: f64,
    /// Whether the image-gradient term is included.
    pub gradient_term: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.2,
            gradient_term: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.alpha.is_finite() && self.alpha > 0.0 {
            Ok(())
        } else {
            Err(LossError::Config(format!("alpha {} must be positive", self.alpha)))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub camera: f64,
    pub depth: f64,
    pub scm: f64,
}

impl FrameLoss {
    pub fn total(&self) -> f64 {
        self.camera + self.depth + self.scm
    }
}

/// Loss terms summed over frames, with the per-frame breakdown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub camera: f64,
    pub depth: f64,
    pub scm: f64,
    pub total: f64,
    pub frames: Vec<FrameLoss>,
}

impl LossReport {
    pub fn from_frames(frames: Vec<FrameLoss>) -> Self {
        let camera = frames.iter().map(|f| f.camera).sum::<f64>();
        let depth = frames.iter().map(|f| f.depth).sum::<f64>();
        let scm = frames.iter().map(|f| f.scm).sum::<f64>();
        LossReport {
            camera,
            depth,
            scm,
            total: camera + depth + scm,
            frames,
        }
    }
}

/// Prediction for one frame, as the loss sees it.
#[derive(Clone, Debug)]
pub struct FramePrediction {
    pub pose: PoseEncoding,
    pub dense: DenseOutput,
}

/// Sum of the three terms over all frames, anchors and queries alike.
/// Targets must already be normalized; only target pixels marked valid are
/// supervised.
pub fn total_loss(
    predictions: &[FramePrediction],
    targets: &[FrameTarget],
    cfg: &LossConfig,
) -> Result<LossReport, LossError> {
    if predictions.len() != targets.len() {
        return Err(LossError::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let frames = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            terms::check_confidence(&p.dense.depth_conf)?;
            terms::check_confidence(&p.dense.scm_conf)?;
            Ok(FrameLoss {
                camera: camera_loss(&p.pose, &t.pose)?,
                depth: depth_loss(&p.dense.depth, &p.dense.depth_conf, &t.dense.depth, &t.dense.valid, cfg)?,
                scm: scm_loss(&p.dense.scm, &p.dense.scm_conf, &t.dense.scm, &t.dense.valid, cfg)?,
            })
        })
        .collect::<Result<Vec<_>, LossError>>()?;
    Ok(LossReport::from_frames(frames))
}
