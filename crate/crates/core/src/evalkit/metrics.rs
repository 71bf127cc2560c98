use nalgebra::Vector3;

use super::EvalError;
use crate::geometry::{umeyama, CameraPose, Quaternion, Similarity};

/// Ground-truth baselines shorter than this have no defined direction.
pub const MIN_BASELINE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Similarity: rotation, translation and scale.
    Sim3,
    /// Rigid: rotation and translation.
    Se3,
}

impl std::str::FromStr for Alignment {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "sim3" => Ok(Alignment::Sim3),
            "se3" => Ok(Alignment::Se3),
            other => Err(EvalError::InvalidInput(format!("unknown alignment {other:?}"))),
        }
    }
}

/// Least-squares `target ≈ s R source + t`.
pub fn umeyama_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Similarity, EvalError> {
    Ok(umeyama(source, target, None, with_scale)?)
}

/// Angle in degrees of the rotation taking `q1` to `q2`.
pub fn relative_rotation_angle(q1: &Quaternion, q2: &Quaternion) -> f64 {
    let d = q1.dot(q2).abs().clamp(-1.0, 1.0);
    (2.0 * d.acos()).to_degrees()
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0) {
        return 180.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Errors of one unordered frame pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairError {
    pub i: usize,
    pub j: usize,
    pub rotation: f64,
    /// `None` when the ground-truth baseline is below [`MIN_BASELINE`].
    pub translation: Option<f64>,
}

/// Rotation `R_i R_j^T` and translation `R_i (c_j - c_i)` of frame `j`
/// relative to frame `i`. Both are invariant to a similarity transform of
/// the world, up to the translation's length.
fn relative(a: &CameraPose, b: &CameraPose) -> (Quaternion, Vector3<f64>) {
    let q = a.rotation.mul(&b.rotation.conjugate());
    let t = a.rotation.rotate(&(b.center() - a.center()));
    (q, t)
}

/// Errors of every pair `i < j` of matched poses.
pub fn pair_errors(est: &[CameraPose], gt: &[CameraPose]) -> Result<Vec<PairError>, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::InvalidInput(format!("{} estimates for {} frames", est.len(), gt.len())));
    }
    if gt.len() < 2 {
        return Err(EvalError::InsufficientFrames { found: gt.len(), needed: 2 });
    }
    let mut out = Vec::with_capacity(gt.len() * (gt.len() - 1) / 2);
    for i in 0..gt.len() {
        for j in i + 1..gt.len() {
            let (qe, te) = relative(&est[i], &est[j]);
            let (qg, tg) = relative(&gt[i], &gt[j]);
            out.push(PairError {
                i,
                j,
                rotation: relative_rotation_angle(&qe, &qg),
                translation: (tg.norm() >= MIN_BASELINE).then(|| angle_between(&te, &tg)),
            });
        }
    }
    Ok(out)
}

fn fraction_below(values: impl Iterator<Item = f64> + Clone, threshold: f64) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    values.filter(|v| *v < threshold).count() as f64 / n as f64
}

/// Fractions of pairs whose rotation and translation-direction errors fall
/// strictly below each threshold (degrees).
pub fn rra_rta(est: &[CameraPose], gt: &[CameraPose], thresholds: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let pairs = pair_errors(est, gt)?;
    let rot = pairs.iter().map(|p| p.rotation);
    let trans = pairs.iter().filter_map(|p| p.translation);
    Ok((
        thresholds.iter().map(|&t| fraction_below(rot.clone(), t)).collect(),
        thresholds.iter().map(|&t| fraction_below(trans.clone(), t)).collect(),
    ))
}

/// Mean over integer thresholds `1..=max_threshold` of the fraction of pairs
/// whose larger error is below the threshold. Pairs without a defined
/// translation direction are skipped, as in RTA.
pub fn maa(est: &[CameraPose], gt: &[CameraPose], max_threshold: u32) -> Result<f64, EvalError> {
    if max_threshold == 0 {
        return Err(EvalError::InvalidInput("mAA needs a positive threshold".into()));
    }
    let pairs = pair_errors(est, gt)?;
    let worst = pairs
        .iter()
        .filter_map(|p| p.translation.map(|t| p.rotation.max(t)));
    let sum: f64 = (1..=max_threshold).map(|t| fraction_below(worst.clone(), f64::from(t))).sum();
    Ok(sum / f64::from(max_threshold))
}

/// RMS distance of points from their centroid.
pub fn rms_spread(points: &[Vector3<f64>]) -> f64 {
    let n = points.len().max(1) as f64;
    let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    (points.iter().map(|p| (p - mean).norm_squared()).sum::<f64>() / n).sqrt()
}

/// Camera-center RMSE after aligning the estimate onto the ground truth,
/// with the ground truth first rescaled to unit RMS spread.
pub fn ate_rmse(est: &[CameraPose], gt: &[CameraPose], alignment: Alignment) -> Result<f64, EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::InvalidInput(format!("{} estimates for {} frames", est.len(), gt.len())));
    }
    if gt.len() < 3 {
        return Err(EvalError::InsufficientFrames { found: gt.len(), needed: 3 });
    }
    let gt_c: Vec<Vector3<f64>> = gt.iter().map(CameraPose::center).collect();
    let spread = rms_spread(&gt_c);
    if !(spread > 0.0) {
        return Err(EvalError::InvalidInput("ground-truth cameras share one center".into()));
    }
    let gt_c: Vec<Vector3<f64>> = gt_c.iter().map(|c| c / spread).collect();
    let est_c: Vec<Vector3<f64>> = est.iter().map(CameraPose::center).collect();
    let s = umeyama_align(&est_c, &gt_c, alignment == Alignment::Sim3)?;
    let sq: f64 = est_c.iter().zip(&gt_c).map(|(e, g)| (s.apply(e) - g).norm_squared()).sum();
    Ok((sq / gt.len() as f64).sqrt())
}
