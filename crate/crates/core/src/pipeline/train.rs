use std::time::Instant;

use ndarray::Array2;

use super::data::{batch_seed, sample_batch, Batch, SceneFamily};
use super::optim::{Adam, Schedule};
use super::{PipelineError, TrainConfig, TrainMode};
use crate::attention::{bind, Graph, ParamTree};
use crate::backbone::{joint_forward, sample_visibility, GlobalAttention, Image, Network};
use crate::losses::{graph_loss, LossConfig, LossReport};

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub batch_seed: u64,
    pub learning_rate: f64,
    pub grad_norm: f64,
    pub frames: usize,
    pub anchors: usize,
    pub ratio: f64,
    pub loss: LossReport,
}

/// Loss and parameter gradients of one batch, gradients in
/// [`ParamTree`] visiting order.
pub fn batch_gradients(
    net: &Network<f32>,
    family: &SceneFamily,
    batch: &Batch,
    mode: TrainMode,
    loss: &LossConfig,
) -> Result<(LossReport, Vec<Array2<f32>>), PipelineError> {
    let cfg = net.config();
    let rs = &family.scenes[batch.scene];
    let images: Vec<&Image> = batch.frames.iter().map(|&f| &rs.images[f]).collect();
    let visible = sample_visibility(cfg, batch.anchors, batch.ratio, batch.seed)?;
    let attention = match mode {
        TrainMode::Masked => GlobalAttention::Localization {
            anchors: batch.anchors,
            visible: &visible,
        },
        TrainMode::Joint => GlobalAttention::Joint,
    };
    let mut g = Graph::<f32>::new();
    let w = bind(&mut g, net.weights());
    let out = joint_forward(&mut g, &w, cfg, &images, attention)?;
    let diverged = PipelineError::NonFinite {
        step: None,
        batch_seed: batch.seed,
    };
    let (total, report) = match graph_loss(&mut g, out.poses, &out.dense, &batch.targets, loss) {
        Err(crate::losses::LossError::NonFinite(_)) => return Err(diverged),
        other => other?,
    };
    if !report.total.is_finite() {
        return Err(diverged);
    }
    let mut grads = g.backward(total);
    let mut leaves = Vec::new();
    w.visit("", &mut |_, v| leaves.push(*v));
    let grads = leaves
        .into_iter()
        .map(|v| grads.take(v).unwrap_or_else(|| Array2::zeros(g.shape(v))))
        .collect();
    Ok((report, grads))
}

/// Sequential first-order training on a fixed scene family.
pub struct Trainer {
    pub config: TrainConfig,
    pub family: SceneFamily,
    pub network: Network<f32>,
    optimizer: Adam,
    schedule: Schedule,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let family = SceneFamily::generate(&config)?;
        Self::with_family(config, family)
    }

    pub fn with_family(config: TrainConfig, family: SceneFamily) -> Result<Self, PipelineError> {
        config.validate()?;
        let network = Network::init(config.network(), config.seed)?;
        let optimizer = Adam::new(network.weights(), &config);
        let schedule = Schedule::from_config(&config);
        Ok(Trainer {
            config,
            family,
            network,
            optimizer,
            schedule,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Samples a batch, backpropagates and updates the weights.
    pub fn step(&mut self) -> Result<StepRecord, PipelineError> {
        let step = self.step;
        let seed = batch_seed(self.config.seed, step);
        let batch = sample_batch(&self.family, &self.config, seed)?;
        let (loss, grads) = batch_gradients(&self.network, &self.family, &batch, self.config.mode, &self.config.loss())
            .map_err(|e| match e {
                PipelineError::NonFinite { batch_seed, .. } => PipelineError::NonFinite {
                    step: Some(step),
                    batch_seed,
                },
                other => other,
            })?;
        let lr = self.schedule.rate(step);
        let grad_norm = self.optimizer.step(self.network.weights_mut(), &grads, lr);
        if !grad_norm.is_finite() {
            return Err(PipelineError::NonFinite {
                step: Some(step),
                batch_seed: seed,
            });
        }
        self.step += 1;
        Ok(StepRecord {
            step,
            batch_seed: seed,
            learning_rate: lr,
            grad_norm,
            frames: batch.frames.len(),
            anchors: batch.anchors,
            ratio: batch.ratio,
            loss,
        })
    }

    /// Runs the remaining steps, calling `on_step` after each one.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<(), PipelineError>,
    ) -> Result<Vec<StepRecord>, PipelineError> {
        let mut history = Vec::with_capacity(self.config.steps.saturating_sub(self.step));
        let start = Instant::now();
        while !self.is_done() {
            let rec = self.step()?;
            if self.config.log_every > 0 && (rec.step % self.config.log_every == 0 || self.is_done()) {
                log::info!(
                    "step {} loss {:.4} (camera {:.4} depth {:.4} scm {:.4}) lr {:.2e} |g| {:.3} {:.1}s",
                    rec.step,
                    rec.loss.total,
                    rec.loss.camera,
                    rec.loss.depth,
                    rec.loss.scm,
                    rec.learning_rate,
                    rec.grad_norm,
                    start.elapsed().as_secs_f64()
                );
            }
            on_step(self, &rec)?;
            history.push(rec);
        }
        Ok(history)
    }
}
