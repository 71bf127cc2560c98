use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PipelineError, TrainConfig};
use crate::backbone::Image;
use crate::geometry::{encode_pose, mean_reference_distance, CameraPose, DenseOutput};
use crate::losses::FrameTarget;
use crate::synth::{generate_scene, render_all, SyntheticScene};

/// A scene with every trajectory frame rendered.
#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub scene: SyntheticScene,
    pub images: Vec<Image>,
    pub dense: Vec<DenseOutput>,
}

impl RenderedScene {
    pub fn new(scene: SyntheticScene, cfg: &TrainConfig) -> Self {
        let (images, dense) = render_all(&scene, cfg.network().resolution()).into_iter().unzip();
        RenderedScene { scene, images, dense }
    }
}

/// The fixed set of scenes a run trains on.
#[derive(Clone, Debug)]
pub struct SceneFamily {
    pub scenes: Vec<RenderedScene>,
}

impl SceneFamily {
    pub fn generate(cfg: &TrainConfig) -> Result<Self, PipelineError> {
        let scenes = (0..cfg.scenes)
            .map(|i| Ok(RenderedScene::new(generate_scene(&cfg.scene(i))?, cfg)))
            .collect::<Result<Vec<_>, PipelineError>>()?;
        Ok(SceneFamily { scenes })
    }
}

/// One training example: anchors first, then queries.
#[derive(Clone, Debug)]
pub struct Batch {
    pub seed: u64,
    pub scene: usize,
    /// Trajectory indices, anchors first.
    pub frames: Vec<usize>,
    pub anchors: usize,
    pub ratio: f64,
    /// Anchor whose camera sets the scale.
    pub reference: usize,
    pub scale: f64,
    pub targets: Vec<FrameTarget>,
}

/// Seed of the batch drawn at `step`.
pub fn batch_seed(run_seed: u64, step: usize) -> u64 {
    run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(step as u64)
        .rotate_left(17)
}

/// Draws a batch: a scene, a frame count, an anchor count and a ratio from
/// the configured ranges, then distinct training frames. The scene is
/// divided by the mean distance from a random anchor's camera to all anchor
/// points; the world axes stay those of the scene.
pub fn sample_batch(family: &SceneFamily, cfg: &TrainConfig, seed: u64) -> Result<Batch, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = rng.random_range(0..family.scenes.len());
    let rs = &family.scenes[scene];
    let mut pool: Vec<usize> = (0..rs.images.len()).filter(|&i| !cfg.is_held_out(i)).collect();
    let n = rng.random_range(cfg.frames_min..=cfg.frames_max.min(pool.len()));
    let anchors = rng.random_range(cfg.anchors_min..=cfg.anchors_max.min(n - 1));
    let ratio = if cfg.ratio_max > cfg.ratio_min {
        rng.random_range(cfg.ratio_min..=cfg.ratio_max)
    } else {
        cfg.ratio_min
    };
    pool.shuffle(&mut rng);
    let frames: Vec<usize> = pool[..n].to_vec();
    let reference = rng.random_range(0..anchors);
    let (scale, targets) = normalized_targets(rs, &frames, anchors, reference)?;
    Ok(Batch {
        seed,
        scene,
        frames,
        anchors,
        ratio,
        reference,
        scale,
        targets,
    })
}

/// Scale from anchor `reference` (an index into `frames[..anchors]`) and the
/// rescaled targets of every frame.
pub fn normalized_targets(
    rs: &RenderedScene,
    frames: &[usize],
    anchors: usize,
    reference: usize,
) -> Result<(f64, Vec<FrameTarget>), PipelineError> {
    let poses: Vec<CameraPose> = frames[..anchors].iter().map(|&f| rs.scene.trajectory[f]).collect();
    let points: Vec<Vec<Vector3<f64>>> = frames[..anchors]
        .iter()
        .map(|&f| {
            let d = &rs.dense[f];
            d.valid
                .indexed_iter()
                .filter(|(_, v)| **v)
                .map(|((y, x), _)| d.scm_at(y, x))
                .collect()
        })
        .collect();
    let scale = mean_reference_distance(&poses, &points, reference)?;
    let targets = frames
        .iter()
        .map(|&f| {
            Ok(FrameTarget {
                pose: encode_pose(&rs.scene.trajectory[f].scaled(scale))?,
                dense: rs.dense[f].scaled(scale),
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok((scale, targets))
}
