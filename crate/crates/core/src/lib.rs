//! Anchor-conditioned feed-forward structure from motion.
//!
//! A transformer regresses poses, depth and scene-coordinate maps for a set of
//! anchor images, keeps a downsampled copy of their intermediate tokens as a
//! scene representation, and localizes further images against it.

pub mod attention;
pub mod backbone;
pub mod evalkit;
pub mod geometry;
pub mod losses;
pub mod pipeline;
pub mod synth;
