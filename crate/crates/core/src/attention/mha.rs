use std::sync::Arc;

use ndarray::Array2;

use super::{
    AttentionError, AttentionMask, AttentionWeights, Graph, Groups, LayerNorm, Linear, ParamTree,
    Scalar, Var,
};

/// Copies every leaf of `params` into `g` as a trainable leaf.
pub fn bind<F: Scalar, P: ParamTree<Array2<F>>>(g: &mut Graph<F>, params: &P) -> P::With<Var> {
    params.map(|_, a| g.param(a.clone()))
}

/// Copies every leaf of `params` into `g` as a constant.
pub fn bind_constant<F: Scalar, P: ParamTree<Array2<F>>>(g: &mut Graph<F>, params: &P) -> P::With<Var> {
    params.map(|_, a| g.constant(a.clone()))
}

pub fn linear<F: Scalar>(g: &mut Graph<F>, w: &Linear<Var>, x: Var) -> Var {
    let y = g.matmul(x, w.weight);
    g.add_row(y, w.bias)
}

pub fn layer_norm<F: Scalar>(g: &mut Graph<F>, w: &LayerNorm<Var>, x: Var) -> Var {
    g.layer_norm(x, w.gamma, w.beta)
}

/// Projects queries and keys/values, attends within `groups`, applies the
/// output projection.
pub fn attend<F: Scalar>(
    g: &mut Graph<F>,
    w: &AttentionWeights<Var>,
    queries: Var,
    keys_values: Var,
    groups: Groups,
    heads: usize,
) -> Var {
    let q = linear(g, &w.query, queries);
    let k = linear(g, &w.key, keys_values);
    let v = linear(g, &w.value, keys_values);
    let a = g.attention(q, k, v, heads, groups);
    linear(g, &w.output, a)
}

pub(crate) fn check_attention_weights<F: Scalar>(
    w: &AttentionWeights<Array2<F>>,
    channels: usize,
    heads: usize,
) -> Result<(), AttentionError> {
    if heads == 0 || !channels.is_multiple_of(heads) {
        return Err(AttentionError::Shape(format!(
            "{channels} channels do not split into {heads} heads"
        )));
    }
    for (name, leaf) in w.leaves() {
        let expect = if name.ends_with("weight") {
            (channels, channels)
        } else {
            (1, channels)
        };
        if leaf.dim() != expect {
            return Err(AttentionError::Shape(format!(
                "{name} is {:?}, expected {expect:?}",
                leaf.dim()
            )));
        }
    }
    Ok(())
}

/// Masked multi-head attention on plain arrays (no normalization, no
/// residual).
pub fn multi_head_attention<F: Scalar>(
    queries: &Array2<F>,
    keys_values: &Array2<F>,
    mask: &AttentionMask,
    weights: &AttentionWeights<Array2<F>>,
    heads: usize,
) -> Result<Array2<F>, AttentionError> {
    let c = queries.ncols();
    if keys_values.ncols() != c {
        return Err(AttentionError::Shape(format!(
            "query width {c} vs key width {}",
            keys_values.ncols()
        )));
    }
    if mask.dim() != (queries.nrows(), keys_values.nrows()) {
        return Err(AttentionError::Shape(format!(
            "mask {:?} vs {}x{} tokens",
            mask.dim(),
            queries.nrows(),
            keys_values.nrows()
        )));
    }
    check_attention_weights(weights, c, heads)?;
    let mut g = Graph::inference();
    let w = bind_constant(&mut g, weights);
    let q = g.constant(queries.clone());
    let kv = g.constant(keys_values.clone());
    let out = attend(&mut g, &w, q, kv, Arc::from(mask.to_groups()), heads);
    Ok(g.value(out).clone())
}
