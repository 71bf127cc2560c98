//! Tensor kernels with reverse-mode differentiation, masked multi-head
//! attention, the anchor/query localization mask and attention against a
//! cache of anchor tokens.

mod block;
mod cache;
mod graph;
mod mask;
mod mha;
pub(crate) mod params;
mod scalar;

pub use block::{
    alternating_block, alternating_layer, transformer_block, LayerOutput, LayerWeights, TokenGrid,
    REGISTER_TOKENS, SPECIAL_TOKENS,
};
pub use cache::{cached_attend, CachedLayer, RepresentationCache};
pub use graph::{AttnGroup, Gradients, Graph, Groups, Var, LAYER_NORM_EPS};
pub use mask::{
    build_localization_mask, frame_groups, localization_groups, AttentionMask, TokenInfo, TokenRole,
};
pub(crate) use mha::check_attention_weights;
pub use mha::{attend, bind, bind_constant, layer_norm, linear, multi_head_attention};
pub(crate) use params::param_tree;
pub use params::{AttentionWeights, BlockWeights, LayerNorm, Linear, ParamTree};
pub use scalar::Scalar;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AttentionError {
    #[error("attention row {row} has no allowed key")]
    MaskedRow { row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("no cached tokens for layer {layer}")]
    CacheMiss { layer: usize },
}
