//! Training, reconstruction and evaluation drivers behind the command line.

mod commands;
mod config;
mod data;
mod manifest;
mod optim;
mod ppm;
mod study;
mod train;

pub use commands::{
    choose_anchors, eval, load_checkpoint, load_scene, make_scene, manifest_path_for, read_trajectory, reconstruct,
    reconstruct_images, resolve_anchor_count, save_checkpoint, train, write_trajectory, ReconstructInput,
    ReconstructOptions, Reconstruction, MIN_ANCHORS, RECOMMENDED_ANCHORS,
};
pub use config::{TrainConfig, TrainMode};
pub use data::{batch_seed, normalized_targets, sample_batch, Batch, RenderedScene, SceneFamily};
pub use manifest::{hash_bytes, hash_file, RunManifest};
pub use optim::{Adam, Schedule};
pub use ppm::{decode_ppm, encode_ppm};
pub use study::{evaluate_held_out, HeldOutEval, SceneEval};
pub use train::{batch_gradients, StepRecord, Trainer};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backbone::BackboneError;
use crate::evalkit::EvalError;
use crate::geometry::GeometryError;
use crate::losses::LossError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss or gradient at step {step:?} (batch seed {batch_seed})")]
    NonFinite { step: Option<usize>, batch_seed: u64 },
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 3 for numerical failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::NonFinite { .. } | PipelineError::Loss(LossError::NonFinite(_)) => 3,
            _ => 2,
        }
    }
}

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "RECON_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] if it is set. Must run
/// before any parallel work.
pub fn configure_threads() -> Result<(), PipelineError> {
    let Ok(text) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| PipelineError::Config(format!("{THREADS_ENV}={text:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| PipelineError::Config(e.to_string()))
}
