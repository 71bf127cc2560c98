use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DENSE_CHANNELS, FF_MULT, POSE_DIM, POSE_HEAD_BLOCKS};
use super::NetworkConfig;
use crate::attention::{
    param_tree, AttentionWeights, BlockWeights, LayerNorm, LayerWeights, Linear, ParamTree, Scalar,
    REGISTER_TOKENS,
};

param_tree! {
    pub struct EmbedWeights<T> {
        /// Flattened `p x p x 3` patch to C channels.
        patch: Linear<T> => tree,
        /// Learned per-patch position embedding, `K x C`.
        position: T => leaf,
        camera: T => leaf,
        registers: T => leaf,
    }
}

param_tree! {
    pub struct PoseHeadWeights<T> {
        blocks: Vec<BlockWeights<T>> => tree,
        norm: LayerNorm<T> => tree,
        out: Linear<T> => tree,
    }
}

param_tree! {
    pub struct DenseHeadWeights<T> {
        norm: LayerNorm<T> => tree,
        hidden: Linear<T> => tree,
        out: Linear<T> => tree,
    }
}

param_tree! {
    pub struct Weights<T> {
        embed: EmbedWeights<T> => tree,
        layers: Vec<LayerWeights<T>> => tree,
        pose_head: PoseHeadWeights<T> => tree,
        dense_head: DenseHeadWeights<T> => tree,
    }
}

const INIT_STD: f64 = 0.02;

struct Init {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Init {
    fn matrix<F: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Array2<F> {
        Array2::from_shape_simple_fn((rows, cols), || F::c(std * self.normal.sample(&mut self.rng)))
    }

    fn linear<F: Scalar>(&mut self, input: usize, output: usize, std: f64) -> Linear<Array2<F>> {
        Linear {
            weight: self.matrix(input, output, std),
            bias: Array2::zeros((1, output)),
        }
    }

    fn block<F: Scalar>(&mut self, c: usize, out_std: f64) -> BlockWeights<Array2<F>> {
        BlockWeights {
            norm1: layer_norm(c),
            attn: AttentionWeights {
                query: self.linear(c, c, INIT_STD),
                key: self.linear(c, c, INIT_STD),
                value: self.linear(c, c, INIT_STD),
                output: self.linear(c, c, out_std),
            },
            norm2: layer_norm(c),
            ff_in: self.linear(c, FF_MULT * c, INIT_STD),
            ff_out: self.linear(FF_MULT * c, c, out_std),
        }
    }
}

fn layer_norm<F: Scalar>(c: usize) -> LayerNorm<Array2<F>> {
    LayerNorm {
        gamma: Array2::ones((1, c)),
        beta: Array2::zeros((1, c)),
    }
}

impl<F: Scalar> Weights<Array2<F>> {
    /// Gaussian initialization (std 0.02, residual output projections scaled
    /// down by depth), deterministic in `seed`.
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Self {
        let c = cfg.channels;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
        };
        let out_std = INIT_STD / ((2 * cfg.layers) as f64).sqrt();
        let embed = EmbedWeights {
            patch: init.linear(cfg.patch_dim(), c, INIT_STD),
            position: init.matrix(cfg.patch_count(), c, INIT_STD),
            camera: init.matrix(1, c, INIT_STD),
            registers: init.matrix(REGISTER_TOKENS, c, INIT_STD),
        };
        let layers = (0..cfg.layers)
            .map(|_| LayerWeights {
                frame: init.block(c, out_std),
                global: init.block(c, out_std),
            })
            .collect();
        let mut pose_out = init.linear(c, POSE_DIM, INIT_STD);
        // Start from the identity rotation so the quaternion slice is never
        // near zero early in training.
        pose_out.bias[[0, 0]] = F::one();
        let pose_head = PoseHeadWeights {
            blocks: (0..POSE_HEAD_BLOCKS).map(|_| init.block(c, out_std)).collect(),
            norm: layer_norm(c),
            out: pose_out,
        };
        let dense_head = DenseHeadWeights {
            norm: layer_norm(c),
            hidden: init.linear(c, c, INIT_STD),
            out: init.linear(c, cfg.patch * cfg.patch * DENSE_CHANNELS, INIT_STD),
        };
        Weights {
            embed,
            layers,
            pose_head,
            dense_head,
        }
    }

    /// Shape of every leaf as dictated by `cfg`, in visiting order.
    pub fn expected_shapes(cfg: &NetworkConfig) -> Vec<(String, (usize, usize))> {
        Weights::<Array2<F>>::init_zeros(cfg)
            .leaves()
            .into_iter()
            .map(|(n, a)| (n, a.dim()))
            .collect()
    }

    fn init_zeros(cfg: &NetworkConfig) -> Self {
        Weights::<Array2<F>>::init(cfg, 0).map(|_, a| Array2::zeros(a.dim()))
    }

    pub fn cast<G: Scalar>(&self) -> Weights<Array2<G>> {
        self.map(|_, a| a.mapv(|v| G::c(v.f64())))
    }

    pub fn parameter_count(&self) -> usize {
        self.leaves().iter().map(|(_, a)| a.len()).sum()
    }
}
