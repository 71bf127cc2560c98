use std::collections::BTreeMap;
use std::time::Instant;

use super::data::SceneFamily;
use super::{PipelineError, TrainConfig, TrainMode};
use crate::backbone::{GlobalAttention, Image, Network};
use crate::evalkit::{evaluate, pair_errors, rms_spread, Alignment, MetricsReport, Trajectory};
use crate::geometry::CameraPose;
use crate::synth::split_anchor_query;

/// Held-out localization quality of one scene.
#[derive(Clone, Debug)]
pub struct SceneEval {
    pub metrics: MetricsReport,
    /// Aligned trajectory error as a fraction of the scene's bounding-box
    /// diagonal.
    pub ate_fraction: f64,
    /// Mean over frame pairs of the larger of the two angular errors, degrees.
    pub mean_pair_error: f64,
    /// Cached tokens summed over layers (0 for joint evaluation).
    pub representation_tokens: usize,
    /// Wall time spent localizing the held-out frames.
    pub localize_seconds: f64,
}

/// Scene-averaged held-out results.
#[derive(Clone, Debug)]
pub struct HeldOutEval {
    pub scenes: Vec<SceneEval>,
}

impl HeldOutEval {
    fn mean(&self, f: impl Fn(&SceneEval) -> f64) -> f64 {
        self.scenes.iter().map(f).sum::<f64>() / self.scenes.len().max(1) as f64
    }

    pub fn rra(&self, threshold: u32) -> f64 {
        self.mean(|s| s.metrics.rra_at.get(&threshold).copied().unwrap_or(f64::NAN))
    }

    pub fn rta(&self, threshold: u32) -> f64 {
        self.mean(|s| s.metrics.rta_at.get(&threshold).copied().unwrap_or(f64::NAN))
    }

    pub fn ate_fraction(&self) -> f64 {
        self.mean(|s| s.ate_fraction)
    }

    pub fn mean_pair_error(&self) -> f64 {
        self.mean(|s| s.mean_pair_error)
    }

    pub fn representation_tokens(&self) -> f64 {
        self.mean(|s| s.representation_tokens as f64)
    }

    pub fn localize_seconds(&self) -> f64 {
        self.scenes.iter().map(|s| s.localize_seconds).sum()
    }

    pub fn summary(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("rra@15".into(), self.rra(15));
        m.insert("rta@15".into(), self.rta(15));
        m.insert("ate_fraction".into(), self.ate_fraction());
        m.insert("mean_pair_error".into(), self.mean_pair_error());
        m
    }
}

/// Localizes the held-out frames of every scene. Anchors are `anchors`
/// evenly strided training frames. In [`TrainMode::Masked`] the anchors are
/// regressed once at ratio `ratio` and the held-out frames are localized
/// against the representation; in [`TrainMode::Joint`] anchors and held-out
/// frames go through one unrestricted pass.
pub fn evaluate_held_out(
    net: &Network<f32>,
    family: &SceneFamily,
    cfg: &TrainConfig,
    anchors: usize,
    ratio: f64,
    seed: u64,
    mode: TrainMode,
) -> Result<HeldOutEval, PipelineError> {
    let mut scenes = Vec::with_capacity(family.scenes.len());
    for rs in &family.scenes {
        let frames = rs.images.len();
        let train: Vec<usize> = (0..frames).filter(|&i| !cfg.is_held_out(i)).collect();
        let held: Vec<usize> = (0..frames).filter(|&i| cfg.is_held_out(i)).collect();
        if held.len() < 3 {
            return Err(PipelineError::Config(format!("{} held-out frames, need 3", held.len())));
        }
        let (picked, _) = split_anchor_query(train.len(), anchors.min(train.len()))?;
        let anchor_images: Vec<&Image> = picked.iter().map(|&i| &rs.images[train[i]]).collect();
        let held_images: Vec<&Image> = held.iter().map(|&i| &rs.images[i]).collect();

        let (poses, tokens, localize_seconds): (Vec<CameraPose>, usize, f64) = match mode {
            TrainMode::Masked => {
                let (rep, _) = net.regress_scene(&anchor_images, ratio, seed)?;
                let start = Instant::now();
                let res = net.localize_batch(&held_images, &rep, held_images.len())?;
                let secs = start.elapsed().as_secs_f64();
                (res.into_iter().map(|r| r.pose).collect(), rep.layer_counts().iter().sum(), secs)
            }
            TrainMode::Joint => {
                let all: Vec<&Image> = anchor_images.iter().chain(&held_images).copied().collect();
                let start = Instant::now();
                let trace = net.joint(&all, GlobalAttention::Joint)?;
                let secs = start.elapsed().as_secs_f64();
                let poses = trace.results[anchor_images.len()..].iter().map(|r| r.pose).collect();
                (poses, 0, secs)
            }
        };

        let gt: Vec<CameraPose> = held.iter().map(|&i| rs.scene.trajectory[i]).collect();
        let metrics = evaluate(
            &Trajectory::from_poses(poses.clone()),
            &Trajectory::from_poses(gt.clone()),
            &[5.0, 15.0, 30.0],
            Alignment::Sim3,
        )?;
        let spread = rms_spread(&gt.iter().map(CameraPose::center).collect::<Vec<_>>());
        let pairs = pair_errors(&poses, &gt)?;
        let worst: Vec<f64> = pairs
            .iter()
            .map(|p| p.rotation.max(p.translation.unwrap_or(0.0)))
            .collect();
        scenes.push(SceneEval {
            ate_fraction: metrics.ate_rmse * spread / rs.scene.extent(),
            mean_pair_error: worst.iter().sum::<f64>() / worst.len() as f64,
            metrics,
            representation_tokens: tokens,
            localize_seconds,
        });
    }
    Ok(HeldOutEval { scenes })
}
