use serde::{Deserialize, Serialize};

use super::BackboneError;
use crate::attention::SPECIAL_TOKENS;
use crate::geometry::Resolution;

/// Network shape plus the default token budget for reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    /// Default anchor count N.
    pub anchors: usize,
    /// Default downsampling ratio r of the scene representation.
    pub ratio: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            width: 64,
            height: 64,
            patch: 8,
            channels: 128,
            layers: 6,
            heads: 4,
            anchors: 8,
            ratio: 0.2,
        }
    }
}

pub const MIN_RATIO: f64 = 0.05;
/// Number of pose-head attention blocks.
pub const POSE_HEAD_BLOCKS: usize = 2;
/// Feed-forward hidden width as a multiple of the channel count.
pub const FF_MULT: usize = 4;
/// Values per pixel emitted by the dense head: depth, depth confidence,
/// three scene coordinates, scene-coordinate confidence.
pub const DENSE_CHANNELS: usize = 6;
/// Width of the pose code.
pub const POSE_DIM: usize = 9;

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), BackboneError> {
        let bad = |m: String| Err(BackboneError::Config(m));
        if self.patch == 0 || self.width == 0 || self.height == 0 {
            return bad("image and patch sizes must be positive".into());
        }
        if !self.width.is_multiple_of(self.patch) || !self.height.is_multiple_of(self.patch) {
            return bad(format!(
                "image {}x{} is not divisible by patch {}",
                self.width, self.height, self.patch
            ));
        }
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad(format!("{} channels do not split into {} heads", self.channels, self.heads));
        }
        if self.layers < 2 {
            return bad(format!("need at least 2 layers, got {}", self.layers));
        }
        if self.anchors == 0 {
            return bad("anchor count must be at least 1".into());
        }
        check_ratio(self.ratio)?;
        Ok(())
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.width, self.height)
    }

    pub fn patches_x(&self) -> usize {
        self.width / self.patch
    }

    /// Patch tokens per frame, K.
    pub fn patch_count(&self) -> usize {
        (self.width / self.patch) * (self.height / self.patch)
    }

    /// All tokens of one frame: K patches, a camera token and registers.
    pub fn tokens_per_frame(&self) -> usize {
        self.patch_count() + SPECIAL_TOKENS
    }

    /// Length of one flattened patch, `p * p * 3`.
    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * 3
    }

    /// Little-endian encoding written at the head of checkpoints; its hash is
    /// the fingerprint that ties representations to a network shape.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::BYTES);
        for v in [
            self.width,
            self.height,
            self.patch,
            self.channels,
            self.layers,
            self.heads,
            self.anchors,
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.ratio.to_le_bytes());
        out
    }

    pub const BYTES: usize = 36;

    pub fn from_bytes(b: &[u8]) -> Result<Self, BackboneError> {
        if b.len() != Self::BYTES {
            return Err(BackboneError::Format(format!("config block of {} bytes", b.len())));
        }
        let u = |i: usize| u32::from_le_bytes(b[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
        let cfg = NetworkConfig {
            width: u(0),
            height: u(1),
            patch: u(2),
            channels: u(3),
            layers: u(4),
            heads: u(5),
            anchors: u(6),
            ratio: f64::from_le_bytes(b[28..36].try_into().expect("8 bytes")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 64-bit FNV-1a hash of [`NetworkConfig::to_bytes`].
    pub fn fingerprint(&self) -> u64 {
        use std::hash::Hasher;
        let mut h = fnv::FnvHasher::default();
        h.write(&self.to_bytes());
        h.finish()
    }
}

pub(crate) fn check_ratio(r: f64) -> Result<(), BackboneError> {
    if r.is_finite() && (MIN_RATIO..=1.0).contains(&r) {
        Ok(())
    } else {
        Err(BackboneError::Config(format!("ratio {r} outside [{MIN_RATIO}, 1]")))
    }
}
