use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};

use super::{
    attend, bind_constant, check_attention_weights, AttentionError, AttentionWeights, AttnGroup,
    Graph, Scalar,
};

/// Cached anchor tokens of one layer with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedLayer<F> {
    pub tokens: Array2<F>,
    /// Anchor slot each token came from.
    pub frames: Vec<usize>,
    /// Row of the token within its frame (camera 0, registers 1-4, patches after).
    pub positions: Vec<usize>,
}

/// Per-layer anchor tokens used as extra keys and values.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationCache<F> {
    layers: Vec<CachedLayer<F>>,
}

impl<F: Scalar> RepresentationCache<F> {
    pub fn new(layers: Vec<CachedLayer<F>>) -> Result<Self, AttentionError> {
        let c = layers.first().map(|l| l.tokens.ncols());
        for (j, l) in layers.iter().enumerate() {
            if Some(l.tokens.ncols()) != c {
                return Err(AttentionError::Shape(format!("layer {j} channel count differs")));
            }
            if l.frames.len() != l.tokens.nrows() || l.positions.len() != l.tokens.nrows() {
                return Err(AttentionError::Shape(format!("layer {j} provenance length")));
            }
        }
        Ok(RepresentationCache { layers })
    }

    pub fn layers(&self) -> &[CachedLayer<F>] {
        &self.layers
    }

    pub fn layer(&self, j: usize) -> Result<&CachedLayer<F>, AttentionError> {
        match self.layers.get(j) {
            Some(l) if l.tokens.nrows() > 0 => Ok(l),
            _ => Err(AttentionError::CacheMiss { layer: j }),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Attention of `query_tokens` over `[cached layer; query_tokens]`.
pub fn cached_attend<F: Scalar>(
    query_tokens: &Array2<F>,
    cache: &RepresentationCache<F>,
    layer_index: usize,
    weights: &AttentionWeights<Array2<F>>,
    heads: usize,
) -> Result<Array2<F>, AttentionError> {
    let layer = cache.layer(layer_index)?;
    let c = query_tokens.ncols();
    if layer.tokens.ncols() != c {
        return Err(AttentionError::Shape(format!(
            "cache width {} vs query width {c}",
            layer.tokens.ncols()
        )));
    }
    check_attention_weights(weights, c, heads)?;
    let kv = concatenate(Axis(0), &[layer.tokens.view(), query_tokens.view()]).expect("widths checked");
    let (q_rows, s) = (query_tokens.nrows(), kv.nrows());
    let mut g = Graph::inference();
    let w = bind_constant(&mut g, weights);
    let q = g.constant(query_tokens.clone());
    let kv = g.constant(kv);
    let groups = Arc::from(vec![AttnGroup::dense(0..q_rows, 0..s)]);
    let out = attend(&mut g, &w, q, kv, groups, heads);
    Ok(g.value(out).clone())
}
