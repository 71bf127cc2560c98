use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backbone::NetworkConfig;
use crate::losses::LossConfig;
use crate::synth::{SceneConfig, TrajectoryKind};

/// What the global blocks of a training batch may attend to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Queries see only the downsampled anchors and themselves.
    Masked,
    /// Unrestricted attention across all frames of the batch.
    Joint,
}

/// Training run settings. Serialized as a flat TOML table; every key is
/// optional and falls back to [`TrainConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    // Network shape.
    pub width: usize,
    pub height: usize,
    pub patch: usize,
    pub channels: usize,
    pub layers: usize,
    pub heads: usize,
    /// Anchor count stored as the reconstruction default.
    pub anchors: usize,
    /// Ratio stored as the reconstruction default.
    pub ratio: f64,

    // Scene family.
    pub scenes: usize,
    pub scene_seed: u64,
    pub scene_points: usize,
    pub scene_frames: usize,
    pub scene_extent: f64,
    pub trajectory: TrajectoryKind,
    /// Orbit arc, radians.
    pub scene_arc: f64,
    /// First orbit azimuth, radians; drawn per scene when unset.
    pub scene_start_azimuth: Option<f64>,
    /// Hold out frames `i` with `i % holdout_every == holdout_every - 1`;
    /// 0 trains on every frame.
    pub holdout_every: usize,

    // Batch sampling, inclusive ranges.
    pub frames_min: usize,
    pub frames_max: usize,
    pub anchors_min: usize,
    pub anchors_max: usize,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub mode: TrainMode,

    // Optimizer.
    pub steps: usize,
    pub seed: u64,
    pub lr_peak: f64,
    pub lr_warmup: usize,
    /// Learning rate reached at the last step of the cosine decay.
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub log_every: usize,

    // Loss.
    pub alpha: f64,
    pub gradient_term: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let loss = LossConfig::default();
        TrainConfig {
            width: net.width,
            height: net.height,
            patch: net.patch,
            channels: net.channels,
            layers: net.layers,
            heads: net.heads,
            anchors: net.anchors,
            ratio: net.ratio,
            scenes: 4,
            scene_seed: 0,
            scene_points: 30_000,
            scene_frames: 48,
            scene_extent: 2.0,
            trajectory: TrajectoryKind::Orbit,
            // Look-at cameras with z up have a 180 degree world-to-camera
            // rotation at azimuth 3 pi / 2, where the canonical quaternion
            // flips sign. The default arc stays clear of it.
            scene_arc: 5.0 * PI / 3.0,
            scene_start_azimuth: Some(5.0 * PI / 3.0),
            holdout_every: 4,
            frames_min: 4,
            frames_max: 48,
            anchors_min: 2,
            anchors_max: 24,
            ratio_min: 0.2,
            ratio_max: 1.0,
            mode: TrainMode::Masked,
            steps: 2000,
            seed: 0,
            lr_peak: 1e-3,
            lr_warmup: 100,
            lr_final: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            checkpoint_every: 0,
            log_every: 50,
            alpha: loss.alpha,
            gradient_term: loss.gradient_term,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            width: self.width,
            height: self.height,
            patch: self.patch,
            channels: self.channels,
            layers: self.layers,
            heads: self.heads,
            anchors: self.anchors,
            ratio: self.ratio,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            gradient_term: self.gradient_term,
        }
    }

    /// Generation settings of scene `index` of the family.
    pub fn scene(&self, index: usize) -> SceneConfig {
        SceneConfig {
            points: self.scene_points,
            extent: self.scene_extent,
            trajectory: self.trajectory,
            frames: self.scene_frames,
            arc: self.scene_arc,
            start_azimuth: self.scene_start_azimuth,
            seed: self.scene_seed.wrapping_add(index as u64),
            ..SceneConfig::default()
        }
    }

    /// Whether frame `i` of every scene is withheld from training.
    pub fn is_held_out(&self, i: usize) -> bool {
        self.holdout_every > 0 && i % self.holdout_every == self.holdout_every - 1
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.network().validate()?;
        self.loss().validate()?;
        if self.scenes == 0 {
            return bad("scenes must be at least 1".into());
        }
        if self.frames_min < 2 || self.frames_min > self.frames_max {
            return bad(format!("frame range [{}, {}]", self.frames_min, self.frames_max));
        }
        if self.anchors_min == 0 || self.anchors_min > self.anchors_max {
            return bad(format!("anchor range [{}, {}]", self.anchors_min, self.anchors_max));
        }
        // Every batch keeps at least one query frame.
        if self.anchors_min >= self.frames_min || self.anchors_max > self.frames_max {
            return bad(format!(
                "anchor range [{}, {}] must sit below frame range [{}, {}]",
                self.anchors_min, self.anchors_max, self.frames_min, self.frames_max
            ));
        }
        let trainable = (0..self.scene_frames).filter(|&i| !self.is_held_out(i)).count();
        if trainable < self.frames_min {
            return bad(format!("{trainable} trainable frames per scene, batches need {}", self.frames_min));
        }
        let net = self.network();
        for r in [self.ratio_min, self.ratio_max] {
            if !(r.is_finite() && r > 0.0 && r <= 1.0) {
                return bad(format!("ratio {r} outside (0, 1]"));
            }
        }
        if self.ratio_min > self.ratio_max {
            return bad(format!("ratio range [{}, {}]", self.ratio_min, self.ratio_max));
        }
        if crate::backbone::kept_patch_count(net.patch_count(), self.ratio_min) == 0 {
            return bad(format!("ratio {} keeps no patches", self.ratio_min));
        }
        let positive = [self.lr_peak, self.epsilon];
        if !positive.iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad("learning rate and epsilon must be positive".into());
        }
        if !(self.lr_final >= 0.0 && self.lr_final <= self.lr_peak) {
            return bad(format!("final learning rate {} outside [0, peak]", self.lr_final));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)".into());
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative".into());
        }
        Ok(())
    }
}
