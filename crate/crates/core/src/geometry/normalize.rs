use nalgebra::Vector3;

use super::{CameraPose, GeometryError};

/// Poses and points divided by a common scale.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedScene {
    pub scale: f64,
    pub poses: Vec<CameraPose>,
    pub points: Vec<Vec<Vector3<f64>>>,
}

/// Mean distance from the camera center of `poses[ref_index]` to every point
/// of every set.
pub fn mean_reference_distance(
    poses: &[CameraPose],
    points: &[Vec<Vector3<f64>>],
    ref_index: usize,
) -> Result<f64, GeometryError> {
    let reference = poses.get(ref_index).ok_or_else(|| {
        GeometryError::InvalidInput(format!(
            "reference index {ref_index} out of range for {} poses",
            poses.len()
        ))
    })?;
    let center = reference.center();
    let (mut sum, mut count) = (0.0, 0usize);
    for p in points.iter().flatten() {
        sum += (p - center).norm();
        count += 1;
    }
    if count == 0 {
        return Err(GeometryError::DegenerateScene("no valid points".into()));
    }
    Ok(sum / count as f64)
}

/// Rescales the scene so the mean distance from the reference camera center
/// to all points is 1. The world origin and orientation are kept.
pub fn normalize_scene(
    poses: &[CameraPose],
    points: &[Vec<Vector3<f64>>],
    ref_index: usize,
) -> Result<NormalizedScene, GeometryError> {
    let scale = mean_reference_distance(poses, points, ref_index)?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(GeometryError::DegenerateScene(format!("scale {scale}")));
    }
    Ok(NormalizedScene {
        scale,
        poses: poses.iter().map(|p| p.scaled(scale)).collect(),
        points: points
            .iter()
            .map(|set| set.iter().map(|p| p / scale).collect())
            .collect(),
    })
}
