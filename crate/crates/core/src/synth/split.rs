use super::SynthError;

/// Evenly strided anchors over `0..frames`, endpoints included. Every frame,
/// anchors too, is returned as a query.
pub fn split_anchor_query(frames: usize, anchors: usize) -> Result<(Vec<usize>, Vec<usize>), SynthError> {
    if anchors == 0 || anchors > frames {
        return Err(SynthError::InvalidSplit { anchors, frames });
    }
    let picked = if anchors == 1 {
        vec![0]
    } else {
        // round(i (M-1) / (N-1)) in integers, halves rounding up.
        let (m, n) = (frames - 1, anchors - 1);
        let mut v: Vec<usize> = (0..anchors).map(|i| (2 * i * m + n) / (2 * n)).collect();
        v.dedup();
        v
    };
    Ok((picked, (0..frames).collect()))
}
