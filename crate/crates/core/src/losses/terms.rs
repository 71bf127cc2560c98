use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Zip};

use super::{LossConfig, LossError};
use crate::geometry::PoseEncoding;

/// L1 subgradient with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `||pred - gt||_1` over the 9 pose values and its gradient in `pred`.
pub fn camera_loss_grad(pred: &PoseEncoding, gt: &PoseEncoding) -> Result<(f64, [f64; 9]), LossError> {
    if !pred.0.iter().chain(&gt.0).all(|v| v.is_finite()) {
        return Err(LossError::NonFinite("pose encoding".into()));
    }
    let mut grad = [0.0; 9];
    let mut total = 0.0;
    for i in 0..9 {
        let d = pred.0[i] - gt.0[i];
        total += d.abs();
        grad[i] = sign(d);
    }
    Ok((total, grad))
}

pub fn camera_loss(pred: &PoseEncoding, gt: &PoseEncoding) -> Result<f64, LossError> {
    camera_loss_grad(pred, gt).map(|(v, _)| v)
}

/// Value and gradients of a confidence-weighted dense term.
#[derive(Clone, Debug)]
pub struct DenseTerm {
    pub value: f64,
    /// Same shape as the prediction, `H x W x channels`.
    pub grad_pred: Array3<f64>,
    pub grad_conf: Array2<f64>,
}

/// `(1/n) [ sum_valid (C |p - g|_1 - alpha ln C) + sum_pairs |grad p - grad g|_1 ]`
/// where `n` counts valid pixels and the image gradient is the forward
/// difference along x and along y, taken only where both pixels are valid.
pub fn confidence_l1(
    pred: ArrayView3<f64>,
    conf: ArrayView2<f64>,
    gt: ArrayView3<f64>,
    valid: ArrayView2<bool>,
    cfg: &LossConfig,
) -> Result<DenseTerm, LossError> {
    let (h, w, ch) = pred.dim();
    if gt.dim() != (h, w, ch) || conf.dim() != (h, w) || valid.dim() != (h, w) {
        return Err(LossError::Shape(format!(
            "pred {:?}, gt {:?}, conf {:?}, valid {:?}",
            pred.dim(),
            gt.dim(),
            conf.dim(),
            valid.dim()
        )));
    }
    cfg.validate()?;
    let n = valid.iter().filter(|v| **v).count();
    if n == 0 {
        return Err(LossError::EmptySupervision);
    }
    let mut grad_pred = Array3::zeros((h, w, ch));
    let mut grad_conf = Array2::zeros((h, w));
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !valid[[y, x]] {
                continue;
            }
            let c = conf[[y, x]];
            if !(c.is_finite() && c > 0.0) {
                return Err(LossError::NonFinite(format!("confidence {c} at ({x}, {y})")));
            }
            let mut l1 = 0.0;
            for k in 0..ch {
                let d = pred[[y, x, k]] - gt[[y, x, k]];
                if !d.is_finite() {
                    return Err(LossError::NonFinite(format!("residual at ({x}, {y})")));
                }
                l1 += d.abs();
                grad_pred[[y, x, k]] += c * sign(d);
            }
            total += c * l1 - cfg.alpha * c.ln();
            grad_conf[[y, x]] = l1 - cfg.alpha / c;
        }
    }
    if cfg.gradient_term {
        for (dy, dx) in [(0usize, 1usize), (1, 0)] {
            for y in 0..h - dy {
                for x in 0..w - dx {
                    let (y2, x2) = (y + dy, x + dx);
                    if !(valid[[y, x]] && valid[[y2, x2]]) {
                        continue;
                    }
                    for k in 0..ch {
                        let d = (pred[[y2, x2, k]] - pred[[y, x, k]]) - (gt[[y2, x2, k]] - gt[[y, x, k]]);
                        total += d.abs();
                        let s = sign(d);
                        grad_pred[[y2, x2, k]] += s;
                        grad_pred[[y, x, k]] -= s;
                    }
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    grad_pred.mapv_inplace(|v| v * inv);
    grad_conf.mapv_inplace(|v| v * inv);
    Ok(DenseTerm {
        value: total * inv,
        grad_pred,
        grad_conf,
    })
}

fn as_channels(a: &Array2<f64>) -> ArrayView3<'_, f64> {
    a.view().insert_axis(ndarray::Axis(2))
}

pub fn depth_loss_grad(
    pred_depth: &Array2<f64>,
    pred_conf: &Array2<f64>,
    gt_depth: &Array2<f64>,
    valid: &Array2<bool>,
    cfg: &LossConfig,
) -> Result<DenseTerm, LossError> {
    confidence_l1(as_channels(pred_depth), pred_conf.view(), as_channels(gt_depth), valid.view(), cfg)
}

pub fn depth_loss(
    pred_depth: &Array2<f64>,
    pred_conf: &Array2<f64>,
    gt_depth: &Array2<f64>,
    valid: &Array2<bool>,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    depth_loss_grad(pred_depth, pred_conf, gt_depth, valid, cfg).map(|t| t.value)
}

pub fn scm_loss_grad(
    pred_scm: &Array3<f64>,
    pred_conf: &Array2<f64>,
    gt_scm: &Array3<f64>,
    valid: &Array2<bool>,
    cfg: &LossConfig,
) -> Result<DenseTerm, LossError> {
    confidence_l1(pred_scm.view(), pred_conf.view(), gt_scm.view(), valid.view(), cfg)
}

pub fn scm_loss(
    pred_scm: &Array3<f64>,
    pred_conf: &Array2<f64>,
    gt_scm: &Array3<f64>,
    valid: &Array2<bool>,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    scm_loss_grad(pred_scm, pred_conf, gt_scm, valid, cfg).map(|t| t.value)
}

/// Confidences are `>= 1` by construction; anything else means the caller
/// bypassed the head's parameterization.
pub(crate) fn check_confidence(conf: &Array2<f64>) -> Result<(), LossError> {
    let mut bad = None;
    Zip::indexed(conf).for_each(|(y, x), &c| {
        if bad.is_none() && !(c >= 1.0 && c.is_finite()) {
            bad = Some((x, y, c));
        }
    });
    match bad {
        Some((x, y, c)) => Err(LossError::NonFinite(format!("confidence {c} < 1 at ({x}, {y})"))),
        None => Ok(()),
    }
}
