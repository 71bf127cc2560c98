use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{check_ratio, POSE_DIM};
use super::network::{cached_forward, joint_forward, DenseVars, ForwardOutput, GlobalAttention, Image};
use super::weights::Weights;
use super::{BackboneError, NetworkConfig};
use crate::attention::{
    bind_constant, localization_groups, CachedLayer, Graph, ParamTree, RepresentationCache, Scalar,
    TokenGrid, SPECIAL_TOKENS,
};
use crate::geometry::{decode_pose, CameraPose, DenseOutput, PoseEncoding};

/// Pose and dense maps predicted for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub pose: CameraPose,
    pub dense: DenseOutput,
}

/// Downsampled anchor tokens of every layer plus the anchors' final camera
/// tokens: everything needed to localize further frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRepresentation<F> {
    pub cache: RepresentationCache<F>,
    /// Final-layer camera tokens of the anchors, one row per anchor.
    pub anchor_camera_tokens: Array2<F>,
    /// Mean distance from the first anchor's predicted camera center to the
    /// anchors' predicted scene points. Near 1 for a well-trained network,
    /// since that is the normalization used in training.
    pub scale: f64,
    pub fingerprint: u64,
}

impl<F: Scalar> SceneRepresentation<F> {
    pub fn anchor_count(&self) -> usize {
        self.anchor_camera_tokens.nrows()
    }

    /// Cached token count per layer.
    pub fn layer_counts(&self) -> Vec<usize> {
        self.cache.layers().iter().map(|l| l.tokens.nrows()).collect()
    }

    /// Cached patch tokens per layer (camera and register tokens excluded).
    pub fn patch_counts(&self) -> Vec<usize> {
        self.cache
            .layers()
            .iter()
            .map(|l| l.positions.iter().filter(|&&p| p >= SPECIAL_TOKENS).count())
            .collect()
    }

    /// In-frame rows visible to queries, per anchor, as recorded in layer 0.
    pub fn visible_rows(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.anchor_count()];
        if let Some(l) = self.cache.layers().first() {
            for (&f, &p) in l.frames.iter().zip(&l.positions) {
                out[f].push(p);
            }
        }
        out
    }
}

/// Number of patch tokens kept per anchor frame at ratio `r`.
pub fn kept_patch_count(patches: usize, r: f64) -> usize {
    // The epsilon keeps exact products such as 0.2 * 60 from flooring down.
    (r * patches as f64 + 1e-9).floor() as usize
}

/// Uniformly samples `floor(r K)` of `patches` patch indices without
/// replacement, returned ascending.
pub fn select_patches(patches: usize, r: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, BackboneError> {
    check_ratio(r)?;
    let n = kept_patch_count(patches, r);
    if n == 0 {
        return Err(BackboneError::EmptySelection { ratio: r, patches });
    }
    let mut idx = rand::seq::index::sample(rng, patches, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// In-frame rows of a frame that survive downsampling: the camera and
/// register tokens followed by the selected patches.
pub fn visible_rows(patch_indices: &[usize]) -> Vec<usize> {
    (0..SPECIAL_TOKENS)
        .chain(patch_indices.iter().map(|&i| SPECIAL_TOKENS + i))
        .collect()
}

/// Draws one visibility list per anchor frame, in anchor order.
pub fn sample_visibility(
    cfg: &NetworkConfig,
    n_anchor: usize,
    r: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>, BackboneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_anchor)
        .map(|_| select_patches(cfg.patch_count(), r, &mut rng).map(|p| visible_rows(&p)))
        .collect()
}

/// The downsampling step: keeps the `visible[a]` rows of every anchor frame
/// in every layer. `after_frame[j]` is `N * T x C` with anchors laid out
/// back to back.
pub fn extract_representation<F: Scalar>(
    after_frame: &[Array2<F>],
    tokens_per_frame: usize,
    visible: &[Vec<usize>],
) -> Result<RepresentationCache<F>, BackboneError> {
    let layers = after_frame
        .iter()
        .map(|tokens| {
            if tokens.nrows() != visible.len() * tokens_per_frame {
                return Err(BackboneError::Shape(format!(
                    "{} token rows for {} anchors of {tokens_per_frame}",
                    tokens.nrows(),
                    visible.len()
                )));
            }
            let mut rows = Vec::new();
            let mut frames = Vec::new();
            let mut positions = Vec::new();
            for (a, sel) in visible.iter().enumerate() {
                for &t in sel {
                    rows.push(a * tokens_per_frame + t);
                    frames.push(a);
                    positions.push(t);
                }
            }
            Ok(CachedLayer {
                tokens: tokens.select(ndarray::Axis(0), &rows),
                frames,
                positions,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RepresentationCache::new(layers)?)
}

/// Values of one forward pass copied out of its graph.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    pub after_frame: Vec<Array2<F>>,
    pub layer_out: Vec<Array2<F>>,
    pub camera_tokens: Array2<F>,
    pub poses: Array2<F>,
    pub results: Vec<FrameResult>,
}

/// Network shape plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<F> {
    config: NetworkConfig,
    weights: Weights<Array2<F>>,
}

impl<F: Scalar> Network<F> {
    pub fn new(config: NetworkConfig, weights: Weights<Array2<F>>) -> Result<Self, BackboneError> {
        config.validate()?;
        let expected = Weights::<Array2<F>>::expected_shapes(&config);
        let actual = weights.leaves();
        if expected.len() != actual.len() {
            return Err(BackboneError::Shape(format!(
                "{} parameters, config expects {}",
                actual.len(),
                expected.len()
            )));
        }
        for ((name, shape), (got_name, leaf)) in expected.iter().zip(&actual) {
            if name != got_name || *shape != leaf.dim() {
                return Err(BackboneError::Shape(format!(
                    "parameter {got_name} {:?}, expected {name} {shape:?}",
                    leaf.dim()
                )));
            }
        }
        Ok(Network { config, weights })
    }

    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self, BackboneError> {
        config.validate()?;
        Self::new(config, Weights::init(&config, seed))
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights<Array2<F>> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Weights<Array2<F>> {
        &mut self.weights
    }

    pub fn into_weights(self) -> Weights<Array2<F>> {
        self.weights
    }

    pub fn fingerprint(&self) -> u64 {
        self.config.fingerprint()
    }

    /// Tokens of one image before any attention.
    pub fn embed_frame(&self, image: &Image, frame_id: usize) -> Result<TokenGrid<F>, BackboneError> {
        let mut g = Graph::inference();
        let w = bind_constant(&mut g, &self.weights.embed);
        let x = super::network::embed(&mut g, &w, &self.config, &[image])?;
        Ok(TokenGrid::from_rows(frame_id, g.value(x))?)
    }

    /// One forward pass over `images` with the given global connectivity.
    pub fn joint(&self, images: &[&Image], attention: GlobalAttention) -> Result<ForwardTrace<F>, BackboneError> {
        let mut g = Graph::inference();
        let w = bind_constant(&mut g, &self.weights);
        let out = joint_forward(&mut g, &w, &self.config, images, attention)?;
        self.trace(&g, &out)
    }

    /// Builds the scene representation from anchors with unrestricted
    /// attention among them; also returns the anchors' own predictions.
    pub fn regress_scene(
        &self,
        anchors: &[&Image],
        r: f64,
        seed: u64,
    ) -> Result<(SceneRepresentation<F>, Vec<FrameResult>), BackboneError> {
        if anchors.is_empty() {
            return Err(BackboneError::EmptyAnchors);
        }
        let visible = sample_visibility(&self.config, anchors.len(), r, seed)?;
        let trace = self.joint(anchors, GlobalAttention::Joint)?;
        let cache = extract_representation(&trace.after_frame, self.config.tokens_per_frame(), &visible)?;
        let rep = SceneRepresentation {
            cache,
            anchor_camera_tokens: trace.camera_tokens,
            scale: predicted_scale(&trace.results),
            fingerprint: self.fingerprint(),
        };
        Ok((rep, trace.results))
    }

    fn check_representation(&self, rep: &SceneRepresentation<F>) -> Result<(), BackboneError> {
        if rep.fingerprint != self.fingerprint() {
            return Err(BackboneError::IncompatibleRepresentation {
                expected: self.fingerprint(),
                found: rep.fingerprint,
            });
        }
        if rep.cache.len() != self.config.layers || rep.anchor_camera_tokens.ncols() != self.config.channels {
            return Err(BackboneError::Shape("representation does not match network shape".into()));
        }
        Ok(())
    }

    /// Localizes a group of frames against the representation in one pass.
    /// Frames never see one another, so the grouping does not change results.
    pub fn localize_trace(
        &self,
        images: &[&Image],
        rep: &SceneRepresentation<F>,
    ) -> Result<ForwardTrace<F>, BackboneError> {
        self.check_representation(rep)?;
        let mut g = Graph::inference();
        let w = bind_constant(&mut g, &self.weights);
        let context: Vec<_> = rep
            .cache
            .layers()
            .iter()
            .map(|l| g.constant(l.tokens.clone()))
            .collect();
        let cams = g.constant(rep.anchor_camera_tokens.clone());
        let out = cached_forward(&mut g, &w, &self.config, images, &context, cams)?;
        self.trace(&g, &out)
    }

    pub fn localize(&self, image: &Image, rep: &SceneRepresentation<F>) -> Result<FrameResult, BackboneError> {
        let mut t = self.localize_trace(&[image], rep)?;
        Ok(t.results.remove(0))
    }

    /// Localizes `images` in batches of `batch_size`, batches in parallel.
    pub fn localize_batch(
        &self,
        images: &[&Image],
        rep: &SceneRepresentation<F>,
        batch_size: usize,
    ) -> Result<Vec<FrameResult>, BackboneError> {
        if batch_size == 0 {
            return Err(BackboneError::Config("batch size must be at least 1".into()));
        }
        self.check_representation(rep)?;
        let batches: Vec<Vec<FrameResult>> = images
            .par_chunks(batch_size)
            .map(|chunk| self.localize_trace(chunk, rep).map(|t| t.results))
            .collect::<Result<_, _>>()?;
        Ok(batches.into_iter().flatten().collect())
    }

    /// Pose head alone on raw camera tokens. With `anchors = Some(a)` the
    /// first `a` rows are anchors and the rest are localized against them.
    pub fn pose_head(&self, camera_tokens: &Array2<F>, anchors: Option<usize>) -> Result<Vec<PoseEncoding>, BackboneError> {
        let n = camera_tokens.nrows();
        if n == 0 || camera_tokens.ncols() != self.config.channels {
            return Err(BackboneError::Shape(format!("camera tokens {:?}", camera_tokens.dim())));
        }
        let groups = match anchors {
            Some(a) if a == 0 || a > n => return Err(BackboneError::EmptyAnchors),
            Some(a) => localization_groups(1, a, n - a, &vec![vec![0]; a])?,
            None => vec![crate::attention::AttnGroup::dense(0..n, 0..n)],
        };
        let mut g = Graph::inference();
        let w = bind_constant(&mut g, &self.weights.pose_head);
        let x = g.constant(camera_tokens.clone());
        let out = super::network::pose_head(&mut g, &w, x, groups.into(), self.config.heads);
        Ok(rows_to_encodings(g.value(out)))
    }

    /// Dense head alone on the `K x C` patch tokens of one frame.
    pub fn dense_head(&self, patch_tokens: &Array2<F>) -> Result<DenseOutput, BackboneError> {
        let k = self.config.patch_count();
        if patch_tokens.dim() != (k, self.config.channels) {
            return Err(BackboneError::Shape(format!("patch tokens {:?}", patch_tokens.dim())));
        }
        let mut g = Graph::inference();
        let w = bind_constant(&mut g, &self.weights.dense_head);
        let rows = ndarray::concatenate(
            ndarray::Axis(0),
            &[Array2::zeros((SPECIAL_TOKENS, self.config.channels)).view(), patch_tokens.view()],
        )
        .expect("widths checked");
        let x = g.constant(rows);
        let d = super::network::dense_head(&mut g, &w, &self.config, x, 1);
        Ok(dense_output(&g, &d[0], &self.config))
    }

    fn trace(&self, g: &Graph<F>, out: &ForwardOutput) -> Result<ForwardTrace<F>, BackboneError> {
        let poses = g.value(out.poses).clone();
        let results = rows_to_encodings(&poses)
            .iter()
            .zip(&out.dense)
            .map(|(enc, d)| {
                Ok(FrameResult {
                    pose: decode_pose(enc)?,
                    dense: dense_output(g, d, &self.config),
                })
            })
            .collect::<Result<Vec<_>, BackboneError>>()?;
        Ok(ForwardTrace {
            after_frame: out.after_frame.iter().map(|&v| g.value(v).clone()).collect(),
            layer_out: out.layer_out.iter().map(|&v| g.value(v).clone()).collect(),
            camera_tokens: g.value(out.camera_tokens).clone(),
            poses,
            results,
        })
    }
}

fn rows_to_encodings<F: Scalar>(poses: &Array2<F>) -> Vec<PoseEncoding> {
    poses
        .outer_iter()
        .map(|row| {
            let mut g = [0.0; POSE_DIM];
            for (dst, v) in g.iter_mut().zip(row) {
                *dst = v.f64();
            }
            PoseEncoding(g)
        })
        .collect()
}

/// Copies one frame's dense maps out of the graph; every pixel is valid.
pub(crate) fn dense_output<F: Scalar>(g: &Graph<F>, d: &DenseVars, cfg: &NetworkConfig) -> DenseOutput {
    let to64 = |v: &Array2<F>| v.mapv(|x| x.f64());
    let scm = to64(g.value(d.scm))
        .into_shape_with_order((cfg.height, cfg.width, 3))
        .map(|a: Array3<f64>| a)
        .expect("scm is H x 3W");
    DenseOutput {
        depth: to64(g.value(d.depth)),
        depth_conf: to64(g.value(d.depth_conf)),
        scm,
        scm_conf: to64(g.value(d.scm_conf)),
        valid: Array2::from_elem((cfg.height, cfg.width), true),
    }
}

fn predicted_scale(anchors: &[FrameResult]) -> f64 {
    let Some(first) = anchors.first() else { return 1.0 };
    let center = first.pose.center();
    let (mut sum, mut n) = (0.0, 0usize);
    for r in anchors {
        let (h, w) = r.dense.depth.dim();
        for y in 0..h {
            for x in 0..w {
                sum += (r.dense.scm_at(y, x) - center).norm();
                n += 1;
            }
        }
    }
    let s = sum / n.max(1) as f64;
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}
