//! Procedural textured scenes with exact ground-truth poses, depth and scene
//! coordinates.

mod io;
mod render;
mod scene;
mod split;

pub use io::{
    dense_to_grid, grid_to_dense, read_grid, read_scene, write_grid, write_scene, DENSE_GRID_CHANNELS, GRID_MAGIC,
    SCENE_MAGIC, SCENE_VERSION,
};
pub use render::{render_all, render_frame, BACKGROUND};
pub use scene::{generate_scene, SceneConfig, ScenePoint, SyntheticScene, TrajectoryKind, MIN_VISIBLE_FRACTION};
pub use split::split_anchor_query;

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("scene generation failed: {0}")]
    GenerationFailed(String),
    #[error("cannot pick {anchors} anchors from {frames} frames")]
    InvalidSplit { anchors: usize, frames: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
