use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};

use super::{
    attend, bind_constant, check_attention_weights, frame_groups, layer_norm, linear,
    param_tree, AttentionError, AttentionMask, BlockWeights, Graph, Groups, Scalar, Var,
};

/// Register tokens per frame.
pub const REGISTER_TOKENS: usize = 4;
/// Camera token plus registers, stored ahead of the patch tokens.
pub const SPECIAL_TOKENS: usize = 1 + REGISTER_TOKENS;

param_tree! {
    /// One alternating layer: frame-wise block, then global block.
    pub struct LayerWeights<T> {
        frame: BlockWeights<T> => tree,
        global: BlockWeights<T> => tree,
    }
}

/// Token state of one frame. As a matrix the rows are ordered camera token,
/// registers, patches.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid<F> {
    pub frame_id: usize,
    pub patch_tokens: Array2<F>,
    pub camera_token: Array2<F>,
    pub register_tokens: Array2<F>,
}

impl<F: Scalar> TokenGrid<F> {
    pub fn new(
        frame_id: usize,
        patch_tokens: Array2<F>,
        camera_token: Array2<F>,
        register_tokens: Array2<F>,
    ) -> Result<Self, AttentionError> {
        let c = patch_tokens.ncols();
        if patch_tokens.nrows() == 0 || c == 0 {
            return Err(AttentionError::Shape("empty token grid".into()));
        }
        if camera_token.dim() != (1, c) || register_tokens.dim() != (REGISTER_TOKENS, c) {
            return Err(AttentionError::Shape(format!(
                "camera {:?} / registers {:?} do not match {c} channels",
                camera_token.dim(),
                register_tokens.dim()
            )));
        }
        let all = patch_tokens.iter().chain(&camera_token).chain(&register_tokens);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(AttentionError::Shape("non-finite token".into()));
        }
        Ok(TokenGrid {
            frame_id,
            patch_tokens,
            camera_token,
            register_tokens,
        })
    }

    /// Inverse of [`TokenGrid::to_rows`].
    pub fn from_rows(frame_id: usize, rows: &Array2<F>) -> Result<Self, AttentionError> {
        if rows.nrows() <= SPECIAL_TOKENS {
            return Err(AttentionError::Shape(format!("{} rows is too few for a frame", rows.nrows())));
        }
        Self::new(
            frame_id,
            rows.slice(s![SPECIAL_TOKENS.., ..]).to_owned(),
            rows.slice(s![0..1, ..]).to_owned(),
            rows.slice(s![1..SPECIAL_TOKENS, ..]).to_owned(),
        )
    }

    pub fn to_rows(&self) -> Array2<F> {
        concatenate(
            Axis(0),
            &[self.camera_token.view(), self.register_tokens.view(), self.patch_tokens.view()],
        )
        .expect("widths validated on construction")
    }

    pub fn token_count(&self) -> usize {
        self.patch_tokens.nrows() + SPECIAL_TOKENS
    }

    pub fn channels(&self) -> usize {
        self.patch_tokens.ncols()
    }
}

/// Pre-norm attention and feed-forward sub-layers, each with a residual.
///
/// With a `context`, keys and values are `[norm(context); norm(x)]` and the
/// group columns index that concatenation; queries are always `norm(x)`.
pub fn transformer_block<F: Scalar>(
    g: &mut Graph<F>,
    w: &BlockWeights<Var>,
    x: Var,
    context: Option<Var>,
    groups: Groups,
    heads: usize,
) -> Var {
    let h = layer_norm(g, &w.norm1, x);
    let kv = match context {
        Some(ctx) => {
            let hc = layer_norm(g, &w.norm1, ctx);
            g.concat_rows(&[hc, h])
        }
        None => h,
    };
    let a = attend(g, &w.attn, h, kv, groups, heads);
    let x = g.add(x, a);
    let h = layer_norm(g, &w.norm2, x);
    let f = linear(g, &w.ff_in, h);
    let f = g.gelu(f);
    let f = linear(g, &w.ff_out, f);
    g.add(x, f)
}

/// Output of one alternating layer.
pub struct LayerOutput {
    /// Tokens after the frame-wise block; what the scene representation caches.
    pub after_frame: Var,
    pub out: Var,
}

/// Frame-wise block over `frames` (one dense group per frame), then the
/// global block under `global`.
pub fn alternating_layer<F: Scalar>(
    g: &mut Graph<F>,
    w: &LayerWeights<Var>,
    x: Var,
    frames: Groups,
    global: Groups,
    context: Option<Var>,
    heads: usize,
) -> LayerOutput {
    let after_frame = transformer_block(g, &w.frame, x, None, frames, heads);
    let out = transformer_block(g, &w.global, after_frame, context, global, heads);
    LayerOutput { after_frame, out }
}

/// Array-level alternating layer over whole frames. `mask`, when given,
/// constrains the global block; without it every token sees every token.
pub fn alternating_block<F: Scalar>(
    frames: &[TokenGrid<F>],
    layer_index: usize,
    weights: &[LayerWeights<Array2<F>>],
    mask: Option<&AttentionMask>,
    heads: usize,
) -> Result<Vec<TokenGrid<F>>, AttentionError> {
    let w = weights.get(layer_index).ok_or_else(|| {
        AttentionError::InvalidConfiguration(format!(
            "layer {layer_index} of {}",
            weights.len()
        ))
    })?;
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let (t0, c) = (first.token_count(), first.channels());
    if frames.iter().any(|f| f.token_count() != t0 || f.channels() != c) {
        return Err(AttentionError::Shape("frames differ in token count or channels".into()));
    }
    check_attention_weights(&w.frame.attn, c, heads)?;
    check_attention_weights(&w.global.attn, c, heads)?;
    let total = t0 * frames.len();
    let global: Groups = match mask {
        Some(m) => {
            if m.dim() != (total, total) {
                return Err(AttentionError::Shape(format!(
                    "mask {:?} for {total} tokens",
                    m.dim()
                )));
            }
            Arc::from(m.to_groups())
        }
        None => Arc::from(vec![super::AttnGroup::dense(0..total, 0..total)]),
    };
    let rows: Vec<Array2<F>> = frames.iter().map(|f| f.to_rows()).collect();
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let x = concatenate(Axis(0), &views).expect("widths checked");

    let mut g = Graph::inference();
    let wv = bind_constant(&mut g, w);
    let x = g.constant(x);
    let out = alternating_layer(
        &mut g,
        &wv,
        x,
        Arc::from(frame_groups(t0, frames.len())),
        global,
        None,
        heads,
    );
    let out = g.value(out.out);
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| TokenGrid::from_rows(f.frame_id, &out.slice(s![i * t0..(i + 1) * t0, ..]).to_owned()))
        .collect()
}
