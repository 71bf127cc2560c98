use std::f64::consts::PI;

use ndarray::Array2;

use super::TrainConfig;
use crate::attention::ParamTree;
use crate::backbone::Weights;

/// Linear warmup to the peak, then cosine decay to the final rate at the
/// last step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: usize,
    pub final_rate: f64,
    pub steps: usize,
}

impl Schedule {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Schedule {
            peak: cfg.lr_peak,
            warmup: cfg.lr_warmup,
            final_rate: cfg.lr_final,
            steps: cfg.steps,
        }
    }

    /// Rate for zero-based `step`.
    pub fn rate(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.steps.saturating_sub(self.warmup).saturating_sub(1);
        if span == 0 {
            return self.peak;
        }
        let t = ((step - self.warmup) as f64 / span as f64).min(1.0);
        self.final_rate + 0.5 * (self.peak - self.final_rate) * (1.0 + (PI * t).cos())
    }
}

/// Adaptive moment estimation with bias correction and optional global
/// norm clipping. Parameters are addressed in [`ParamTree`] visiting order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
    first: Vec<Array2<f32>>,
    second: Vec<Array2<f32>>,
    steps: u32,
}

impl Adam {
    pub fn new(weights: &Weights<Array2<f32>>, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Array2<f32>> = weights.leaves().iter().map(|(_, a)| Array2::zeros(a.dim())).collect();
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            clip_norm: cfg.clip_norm,
            second: zeros.clone(),
            first: zeros,
            steps: 0,
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, weights: &mut Weights<Array2<f32>>, grads: &[Array2<f32>], lr: f64) -> f64 {
        assert_eq!(grads.len(), self.first.len(), "one gradient per parameter");
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        let clip = if self.clip_norm > 0.0 && norm > self.clip_norm {
            self.clip_norm / norm
        } else {
            1.0
        };
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let step_size = (lr / c1) as f32;
        let (b1f, b2f, eps, c2f, clipf) = (b1 as f32, b2 as f32, self.epsilon as f32, c2 as f32, clip as f32);
        let mut i = 0;
        weights.visit_mut("", &mut |_, w| {
            let (m, v, g) = (&mut self.first[i], &mut self.second[i], &grads[i]);
            ndarray::Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
                let g = g * clipf;
                *m = b1f * *m + (1.0 - b1f) * g;
                *v = b2f * *v + (1.0 - b2f) * g * g;
                *w -= step_size * *m / ((*v / c2f).sqrt() + eps);
            });
            i += 1;
        });
        norm
    }
}
