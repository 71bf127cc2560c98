use ndarray::Array2;

use super::{AttentionError, AttnGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenRole {
    Anchor,
    Query,
}

/// Provenance of one token row or column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenInfo {
    pub frame: usize,
    pub role: TokenRole,
    /// Whether the token is the kind that ends up in the scene representation.
    pub cached: bool,
}

/// Boolean query x key visibility with per-token provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    allowed: Array2<bool>,
    row_tokens: Vec<TokenInfo>,
    col_tokens: Vec<TokenInfo>,
}

impl AttentionMask {
    pub fn new(
        allowed: Array2<bool>,
        row_tokens: Vec<TokenInfo>,
        col_tokens: Vec<TokenInfo>,
    ) -> Result<Self, AttentionError> {
        let (q, s) = allowed.dim();
        if row_tokens.len() != q || col_tokens.len() != s {
            return Err(AttentionError::Shape(format!(
                "mask is {q}x{s} but provenance covers {}x{}",
                row_tokens.len(),
                col_tokens.len()
            )));
        }
        if let Some(row) = allowed.outer_iter().position(|r| !r.iter().any(|a| *a)) {
            return Err(AttentionError::MaskedRow { row });
        }
        Ok(AttentionMask {
            allowed,
            row_tokens,
            col_tokens,
        })
    }

    /// Every query sees every key; all tokens are anchor tokens of frame 0.
    pub fn full(q: usize, s: usize) -> Result<Self, AttentionError> {
        let info = TokenInfo {
            frame: 0,
            role: TokenRole::Anchor,
            cached: true,
        };
        Self::new(Array2::from_elem((q, s), true), vec![info; q], vec![info; s])
    }

    pub fn dim(&self) -> (usize, usize) {
        self.allowed.dim()
    }

    pub fn allowed(&self) -> &Array2<bool> {
        &self.allowed
    }

    pub fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[[row, col]]
    }

    pub fn row_tokens(&self) -> &[TokenInfo] {
        &self.row_tokens
    }

    pub fn col_tokens(&self) -> &[TokenInfo] {
        &self.col_tokens
    }

    /// Splits the mask into maximal runs of identical consecutive rows.
    pub fn to_groups(&self) -> Vec<AttnGroup> {
        let mut groups: Vec<AttnGroup> = Vec::new();
        let mut start = 0;
        let n = self.allowed.nrows();
        for i in 1..=n {
            if i == n || self.allowed.row(i) != self.allowed.row(start) {
                let cols = self
                    .allowed
                    .row(start)
                    .iter()
                    .enumerate()
                    .filter_map(|(j, a)| a.then_some(j))
                    .collect();
                groups.push(AttnGroup::new(start..i, cols));
                start = i;
            }
        }
        groups
    }
}

/// Mask over `anchors ++ queries` (tokens laid out frame by frame in that
/// order): anchors see all anchors, each query sees all anchors and its own
/// frame, and nothing sees another query's tokens.
pub fn build_localization_mask(
    anchor_layout: &[(usize, usize)],
    query_layout: &[(usize, usize)],
) -> Result<AttentionMask, AttentionError> {
    if anchor_layout.is_empty() {
        return Err(AttentionError::InvalidConfiguration("no anchor frames".into()));
    }
    let mut tokens = Vec::new();
    for &(frame, count) in anchor_layout {
        tokens.extend(std::iter::repeat_n(
            TokenInfo {
                frame,
                role: TokenRole::Anchor,
                cached: true,
            },
            count,
        ));
    }
    let n_anchor = tokens.len();
    if n_anchor == 0 {
        return Err(AttentionError::InvalidConfiguration("anchor frames have no tokens".into()));
    }
    let mut query_ranges = Vec::new();
    for &(frame, count) in query_layout {
        query_ranges.push(tokens.len()..tokens.len() + count);
        tokens.extend(std::iter::repeat_n(
            TokenInfo {
                frame,
                role: TokenRole::Query,
                cached: false,
            },
            count,
        ));
    }
    let n = tokens.len();
    let mut allowed = Array2::from_elem((n, n), false);
    allowed.slice_mut(ndarray::s![..n_anchor, ..n_anchor]).fill(true);
    for r in query_ranges {
        allowed.slice_mut(ndarray::s![r.clone(), ..n_anchor]).fill(true);
        allowed.slice_mut(ndarray::s![r.clone(), r]).fill(true);
    }
    AttentionMask::new(allowed, tokens.clone(), tokens)
}

/// Attention groups for `n_anchor` anchor frames followed by `n_query` query
/// frames, each `tokens_per_frame` rows long. Queries see the anchor tokens
/// listed in `visible[a]` (in-frame indices, ascending) plus their own frame.
/// With every anchor token visible this is exactly
/// [`build_localization_mask`] in group form.
pub fn localization_groups(
    tokens_per_frame: usize,
    n_anchor: usize,
    n_query: usize,
    visible: &[Vec<usize>],
) -> Result<Vec<AttnGroup>, AttentionError> {
    if n_anchor == 0 {
        return Err(AttentionError::InvalidConfiguration("no anchor frames".into()));
    }
    if visible.len() != n_anchor {
        return Err(AttentionError::Shape(format!(
            "{} visibility lists for {n_anchor} anchors",
            visible.len()
        )));
    }
    let anchor_rows = n_anchor * tokens_per_frame;
    let mut anchor_cols = Vec::new();
    for (a, sel) in visible.iter().enumerate() {
        if sel.iter().any(|&t| t >= tokens_per_frame) {
            return Err(AttentionError::Shape("visible token index out of frame".into()));
        }
        anchor_cols.extend(sel.iter().map(|&t| a * tokens_per_frame + t));
    }
    let mut groups = vec![AttnGroup::dense(0..anchor_rows, 0..anchor_rows)];
    for q in 0..n_query {
        let start = anchor_rows + q * tokens_per_frame;
        let own = start..start + tokens_per_frame;
        let mut cols = anchor_cols.clone();
        cols.extend(own.clone());
        groups.push(AttnGroup::new(own, cols));
    }
    Ok(groups)
}

/// One dense group per frame.
pub fn frame_groups(tokens_per_frame: usize, n_frames: usize) -> Vec<AttnGroup> {
    (0..n_frames)
        .map(|f| {
            let r = f * tokens_per_frame..(f + 1) * tokens_per_frame;
            AttnGroup::dense(r.clone(), r)
        })
        .collect()
}
