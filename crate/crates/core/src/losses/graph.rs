use ndarray::{Array2, Ix2};

use super::terms::{camera_loss_grad, confidence_l1};
use super::{FrameLoss, LossConfig, LossError, LossReport};
use crate::attention::{Graph, Scalar, Var};
use crate::backbone::DenseVars;
use crate::geometry::{DenseOutput, PoseEncoding};

/// Normalized ground truth for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTarget {
    pub pose: PoseEncoding,
    pub dense: DenseOutput,
}

fn to64<F: Scalar>(a: &Array2<F>) -> Array2<f64> {
    a.mapv(|v| v.f64())
}

fn to_f<F: Scalar, D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> ndarray::Array<F, D> {
    a.mapv(F::c)
}

/// Attaches the total loss of a forward pass to its graph. `poses` holds one
/// pose row per frame and `dense` one entry per frame, in target order.
pub fn graph_loss<F: Scalar>(
    g: &mut Graph<F>,
    poses: Var,
    dense: &[DenseVars],
    targets: &[FrameTarget],
    cfg: &LossConfig,
) -> Result<(Var, LossReport), LossError> {
    let n = targets.len();
    if dense.len() != n || g.shape(poses) != (n, 9) {
        return Err(LossError::Shape(format!(
            "{} dense outputs and poses {:?} for {n} targets",
            dense.len(),
            g.shape(poses)
        )));
    }
    let pose_values = to64(g.value(poses));
    let mut pose_grad = Array2::<f64>::zeros((n, 9));
    let mut frames = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(2 * n + 1);
    for (f, (d, t)) in dense.iter().zip(targets).enumerate() {
        let mut pred = [0.0; 9];
        for (dst, v) in pred.iter_mut().zip(pose_values.row(f)) {
            *dst = *v;
        }
        let (camera, grad) = camera_loss_grad(&PoseEncoding(pred), &t.pose)?;
        for (dst, v) in pose_grad.row_mut(f).iter_mut().zip(grad) {
            *dst = v;
        }

        let depth = to64(g.value(d.depth));
        let depth_conf = to64(g.value(d.depth_conf));
        let dt = confidence_l1(
            depth.view().insert_axis(ndarray::Axis(2)),
            depth_conf.view(),
            t.dense.depth.view().insert_axis(ndarray::Axis(2)),
            t.dense.valid.view(),
            cfg,
        )?;
        let gd = dt.grad_pred.index_axis(ndarray::Axis(2), 0).to_owned();
        terms.push(g.scalar_fn(
            F::c(dt.value),
            vec![(d.depth, to_f(&gd)), (d.depth_conf, to_f(&dt.grad_conf))],
        ));

        let (h, w) = t.dense.depth.dim();
        let scm = to64(g.value(d.scm))
            .into_shape_with_order((h, w, 3))
            .map_err(|e| LossError::Shape(e.to_string()))?;
        let scm_conf = to64(g.value(d.scm_conf));
        let st = confidence_l1(scm.view(), scm_conf.view(), t.dense.scm.view(), t.dense.valid.view(), cfg)?;
        let gs = st
            .grad_pred
            .into_shape_with_order((h, 3 * w))
            .map_err(|e| LossError::Shape(e.to_string()))?
            .into_dimensionality::<Ix2>()
            .map_err(|e| LossError::Shape(e.to_string()))?;
        terms.push(g.scalar_fn(
            F::c(st.value),
            vec![(d.scm, to_f(&gs)), (d.scm_conf, to_f(&st.grad_conf))],
        ));

        frames.push(FrameLoss {
            camera,
            depth: dt.value,
            scm: st.value,
        });
    }
    let report = LossReport::from_frames(frames);
    terms.push(g.scalar_fn(F::c(report.camera), vec![(poses, to_f(&pose_grad))]));
    let total = g.sum_scalars(&terms);
    Ok((total, report))
}
