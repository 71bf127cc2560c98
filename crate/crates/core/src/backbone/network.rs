//! Graph-level forward passes shared by training and inference.

use std::sync::Arc;

use ndarray::{Array2, Array3};

use super::config::DENSE_CHANNELS;
use super::weights::{DenseHeadWeights, EmbedWeights, PoseHeadWeights, Weights};
use super::{BackboneError, NetworkConfig};
use crate::attention::{
    alternating_layer, frame_groups, layer_norm, linear, localization_groups, transformer_block,
    AttnGroup, Graph, Groups, Scalar, Var, SPECIAL_TOKENS,
};

/// `H x W x 3` image with values in `[0, 1]`.
pub type Image = Array3<f32>;

/// How the global blocks connect frames.
#[derive(Clone, Copy, Debug)]
pub enum GlobalAttention<'a> {
    /// Every token sees every token of every frame.
    Joint,
    /// The first `anchors` frames are anchors and see only each other. Every
    /// later frame sees its own tokens plus, for each anchor `a`, the in-frame
    /// token rows listed in `visible[a]`.
    Localization {
        anchors: usize,
        visible: &'a [Vec<usize>],
    },
}

/// Dense head output of one frame. `scm` is `H x 3W` with element
/// `[y, 3x + c]` holding coordinate `c` of pixel `(x, y)`.
#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub depth: Var,
    pub depth_conf: Var,
    pub scm: Var,
    pub scm_conf: Var,
}

pub struct ForwardOutput {
    /// Per layer, all frames' tokens after the frame-wise block.
    pub after_frame: Vec<Var>,
    /// Per layer, all frames' tokens after the global block.
    pub layer_out: Vec<Var>,
    /// Final tokens of all frames.
    pub tokens: Var,
    /// Final camera tokens, one row per frame.
    pub camera_tokens: Var,
    /// Pose codes (quaternion already normalized), one row per frame.
    pub poses: Var,
    pub dense: Vec<DenseVars>,
}

/// Splits an image into flattened patches, one row per patch in row-major
/// patch order; each row is laid out `(dy, dx, channel)`.
pub fn patchify<F: Scalar>(image: &Image, cfg: &NetworkConfig) -> Result<Array2<F>, BackboneError> {
    if image.dim() != (cfg.height, cfg.width, 3) {
        return Err(BackboneError::Shape(format!(
            "image is {:?}, network expects ({}, {}, 3)",
            image.dim(),
            cfg.height,
            cfg.width
        )));
    }
    let p = cfg.patch;
    let px = cfg.patches_x();
    let mut out = Array2::zeros((cfg.patch_count(), cfg.patch_dim()));
    for ((y, x, c), v) in image.indexed_iter() {
        let k = (y / p) * px + x / p;
        out[[k, ((y % p) * p + x % p) * 3 + c]] = F::c(*v as f64);
    }
    Ok(out)
}

/// Token matrix of all frames, frame after frame, each laid out
/// `[camera, registers, patches]`.
pub fn embed<F: Scalar>(
    g: &mut Graph<F>,
    w: &EmbedWeights<Var>,
    cfg: &NetworkConfig,
    images: &[&Image],
) -> Result<Var, BackboneError> {
    let k = cfg.patch_count();
    let mut patches = Array2::zeros((images.len() * k, cfg.patch_dim()));
    for (f, img) in images.iter().enumerate() {
        patches
            .slice_mut(ndarray::s![f * k..(f + 1) * k, ..])
            .assign(&patchify::<F>(img, cfg)?);
    }
    let patches = g.constant(patches);
    let tokens = linear(g, &w.patch, patches);
    let pos_index = (0..images.len()).flat_map(|_| 0..k).collect();
    let pos = g.row_select(w.position, pos_index);
    let tokens = g.add(tokens, pos);
    let base = g.concat_rows(&[w.camera, w.registers, tokens]);
    let mut order = Vec::with_capacity(images.len() * cfg.tokens_per_frame());
    for f in 0..images.len() {
        order.extend(0..SPECIAL_TOKENS);
        order.extend((0..k).map(|i| SPECIAL_TOKENS + f * k + i));
    }
    Ok(g.row_select(base, order))
}

fn global_groups(
    attention: GlobalAttention,
    t0: usize,
    n_frames: usize,
) -> Result<(Groups, Groups), BackboneError> {
    Ok(match attention {
        GlobalAttention::Joint => {
            let n = t0 * n_frames;
            let all: Groups = Arc::from(vec![AttnGroup::dense(0..n, 0..n)]);
            let cams: Groups = Arc::from(vec![AttnGroup::dense(0..n_frames, 0..n_frames)]);
            (all, cams)
        }
        GlobalAttention::Localization { anchors, visible } => {
            if anchors == 0 || anchors > n_frames {
                return Err(BackboneError::EmptyAnchors);
            }
            let tokens = localization_groups(t0, anchors, n_frames - anchors, visible)?;
            let cams = localization_groups(1, anchors, n_frames - anchors, &vec![vec![0]; anchors])?;
            (Arc::from(tokens), Arc::from(cams))
        }
    })
}

/// Runs every frame through embedding, all layers and both heads in a
/// single pass.
pub fn joint_forward<F: Scalar>(
    g: &mut Graph<F>,
    w: &Weights<Var>,
    cfg: &NetworkConfig,
    images: &[&Image],
    attention: GlobalAttention,
) -> Result<ForwardOutput, BackboneError> {
    if images.is_empty() {
        return Err(BackboneError::EmptyAnchors);
    }
    let t0 = cfg.tokens_per_frame();
    let n = images.len();
    let (global, cam_groups) = global_groups(attention, t0, n)?;
    let frames: Groups = Arc::from(frame_groups(t0, n));
    let mut x = embed(g, &w.embed, cfg, images)?;
    let mut after_frame = Vec::with_capacity(cfg.layers);
    let mut layer_out = Vec::with_capacity(cfg.layers);
    for lw in &w.layers {
        let out = alternating_layer(g, lw, x, frames.clone(), global.clone(), None, cfg.heads);
        after_frame.push(out.after_frame);
        layer_out.push(out.out);
        x = out.out;
    }
    let camera_tokens = g.row_select(x, (0..n).map(|f| f * t0).collect());
    let poses = pose_head(g, &w.pose_head, camera_tokens, cam_groups, cfg.heads);
    let dense = dense_head(g, &w.dense_head, cfg, x, n);
    Ok(ForwardOutput {
        after_frame,
        layer_out,
        tokens: x,
        camera_tokens,
        poses,
        dense,
    })
}

/// Localizes `images` against cached anchor tokens: `context[j]` holds the
/// cached tokens of layer `j` and `anchor_cameras` the anchors' final camera
/// tokens. Each frame sees only the cache and itself.
pub fn cached_forward<F: Scalar>(
    g: &mut Graph<F>,
    w: &Weights<Var>,
    cfg: &NetworkConfig,
    images: &[&Image],
    context: &[Var],
    anchor_cameras: Var,
) -> Result<ForwardOutput, BackboneError> {
    if context.len() != cfg.layers {
        return Err(BackboneError::Shape(format!(
            "{} cached layers for a {}-layer network",
            context.len(),
            cfg.layers
        )));
    }
    let t0 = cfg.tokens_per_frame();
    let n = images.len();
    let frames: Groups = Arc::from(frame_groups(t0, n));
    let mut x = embed(g, &w.embed, cfg, images)?;
    let mut after_frame = Vec::with_capacity(cfg.layers);
    let mut layer_out = Vec::with_capacity(cfg.layers);
    for (lw, &ctx) in w.layers.iter().zip(context) {
        let m = g.shape(ctx).0;
        let groups: Vec<AttnGroup> = (0..n)
            .map(|q| {
                let own = q * t0..(q + 1) * t0;
                let cols = (0..m).chain(own.clone().map(|c| m + c)).collect();
                AttnGroup::new(own, cols)
            })
            .collect();
        let out = alternating_layer(g, lw, x, frames.clone(), Arc::from(groups), Some(ctx), cfg.heads);
        after_frame.push(out.after_frame);
        layer_out.push(out.out);
        x = out.out;
    }
    let camera_tokens = g.row_select(x, (0..n).map(|f| f * t0).collect());
    let n_anchor = g.shape(anchor_cameras).0;
    let cams = g.concat_rows(&[anchor_cameras, camera_tokens]);
    let cam_groups = localization_groups(1, n_anchor, n, &vec![vec![0]; n_anchor])?;
    let all_poses = pose_head(g, &w.pose_head, cams, Arc::from(cam_groups), cfg.heads);
    let poses = g.rows(all_poses, n_anchor..n_anchor + n);
    let dense = dense_head(g, &w.dense_head, cfg, x, n);
    Ok(ForwardOutput {
        after_frame,
        layer_out,
        tokens: x,
        camera_tokens,
        poses,
        dense,
    })
}

/// Attention blocks over camera tokens, then a linear map to the 9-value
/// pose code with the quaternion slice normalized.
pub fn pose_head<F: Scalar>(
    g: &mut Graph<F>,
    w: &PoseHeadWeights<Var>,
    camera_tokens: Var,
    groups: Groups,
    heads: usize,
) -> Var {
    let mut x = camera_tokens;
    for b in &w.blocks {
        x = transformer_block(g, b, x, None, groups.clone(), heads);
    }
    let h = layer_norm(g, &w.norm, x);
    let raw = linear(g, &w.out, h);
    g.quat_normalize(raw)
}

/// Gather indices reassembling channel `channel` of frame `frame` from the
/// per-patch head output into an `H x W` grid.
fn unpatch_index(cfg: &NetworkConfig, frame: usize, channel: usize) -> Vec<usize> {
    let p = cfg.patch;
    let row_len = p * p * DENSE_CHANNELS;
    let k = cfg.patch_count();
    let mut idx = Vec::with_capacity(cfg.width * cfg.height);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let patch = (y / p) * cfg.patches_x() + x / p;
            let col = channel * p * p + (y % p) * p + x % p;
            idx.push((frame * k + patch) * row_len + col);
        }
    }
    idx
}

/// Per-token MLP emitting `p x p x 6` values per patch token, reassembled
/// into full-resolution maps. `tokens` holds all frames in the usual layout.
pub fn dense_head<F: Scalar>(
    g: &mut Graph<F>,
    w: &DenseHeadWeights<Var>,
    cfg: &NetworkConfig,
    tokens: Var,
    n_frames: usize,
) -> Vec<DenseVars> {
    let t0 = cfg.tokens_per_frame();
    let patch_rows = (0..n_frames)
        .flat_map(|f| (SPECIAL_TOKENS..t0).map(move |t| f * t0 + t))
        .collect();
    let patches = g.row_select(tokens, patch_rows);
    let h = layer_norm(g, &w.norm, patches);
    let h = linear(g, &w.hidden, h);
    let h = g.gelu(h);
    let raw = linear(g, &w.out, h);
    let shape = (cfg.height, cfg.width);
    (0..n_frames)
        .map(|f| {
            let depth_raw = g.gather(raw, unpatch_index(cfg, f, 0), shape);
            let dconf_raw = g.gather(raw, unpatch_index(cfg, f, 1), shape);
            let sconf_raw = g.gather(raw, unpatch_index(cfg, f, 5), shape);
            let coords: Vec<Vec<usize>> = (0..3).map(|c| unpatch_index(cfg, f, 2 + c)).collect();
            let scm_index = (0..cfg.width * cfg.height)
                .flat_map(|i| coords.iter().map(move |c| c[i]))
                .collect();
            let scm = g.gather(raw, scm_index, (cfg.height, cfg.width * 3));
            let depth = g.exp(depth_raw);
            let e = g.exp(dconf_raw);
            let depth_conf = g.add_scalar(e, F::one());
            let e = g.exp(sconf_raw);
            let scm_conf = g.add_scalar(e, F::one());
            DenseVars {
                depth,
                depth_conf,
                scm,
                scm_conf,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unpatch_index_is_a_permutation() {
        let cfg = NetworkConfig::default();
        let mut all: Vec<usize> = (0..DENSE_CHANNELS).flat_map(|c| unpatch_index(&cfg, 1, c)).collect();
        all.sort_unstable();
        let row_len = cfg.patch * cfg.patch * DENSE_CHANNELS;
        let start = cfg.patch_count() * row_len;
        assert_eq!(all, (start..start + cfg.patch_count() * row_len).collect::<Vec<_>>());
    }

    #[test]
    fn patchify_layout() {
        let cfg = NetworkConfig::default();
        let mut img = Image::zeros((64, 64, 3));
        img[[9, 18, 2]] = 1.0;
        let p = patchify::<f32>(&img, &cfg).unwrap();
        // pixel (x=18, y=9) lives in patch (2, 1) at offset (dy=1, dx=2)
        assert_eq!(p[[8 + 2, (8 + 2) * 3 + 2]], 1.0);
        assert_eq!(p.sum(), 1.0);
    }
}
