//! The network: patch embedding, alternating frame/global attention layers,
//! pose and dense heads, scene-representation extraction and localization.

mod config;
pub(crate) mod io;
mod model;
mod network;
mod weights;

pub use config::{NetworkConfig, DENSE_CHANNELS, FF_MULT, MIN_RATIO, POSE_DIM, POSE_HEAD_BLOCKS};
pub use io::{read_checkpoint, read_representation, write_checkpoint, write_representation};
pub use model::{
    extract_representation, kept_patch_count, sample_visibility, select_patches, visible_rows,
    ForwardTrace, FrameResult, Network, SceneRepresentation,
};
pub use network::{
    cached_forward, dense_head, embed, joint_forward, patchify, pose_head, DenseVars, ForwardOutput,
    GlobalAttention, Image,
};
pub use weights::{DenseHeadWeights, EmbedWeights, PoseHeadWeights, Weights};

use thiserror::Error;

use crate::attention::AttentionError;
use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("no anchor frames")]
    EmptyAnchors,
    #[error("ratio {ratio} keeps no tokens out of {patches}")]
    EmptySelection { ratio: f64, patches: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("representation fingerprint {found:016x} does not match network {expected:016x}")]
    IncompatibleRepresentation { expected: u64, found: u64 },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
