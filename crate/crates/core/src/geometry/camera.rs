use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{CameraPose, GeometryError};

/// Image size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub fn new(width: usize, height: usize) -> Self {
        Resolution { width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Pinhole intrinsics derived from a fov pair: principal point at
/// `(W/2, H/2)`, focal length `(W/2) / tan(fov_x/2)` (and likewise for y).
///
/// Pixel `(i, j)` has its center at continuous coordinate `(i, j)`, so the
/// optical axis passes through the center of pixel `(W/2, H/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn from_fov(fov: &Vector2<f64>, res: Resolution) -> Self {
        let half_w = res.width as f64 / 2.0;
        let half_h = res.height as f64 / 2.0;
        Intrinsics {
            fx: half_w / (fov.x / 2.0).tan(),
            fy: half_h / (fov.y / 2.0).tan(),
            cx: half_w,
            cy: half_h,
        }
    }

    /// Camera-frame point at depth `z` seen through `pixel`.
    pub fn backproject(&self, pixel: &Vector2<f64>, z: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx * z,
            (pixel.y - self.cy) / self.fy * z,
            z,
        )
    }
}

/// Projects a world point; returns continuous pixel coordinates and the
/// camera-frame depth.
pub fn project(
    point_world: &Vector3<f64>,
    pose: &CameraPose,
    res: Resolution,
) -> Result<(Vector2<f64>, f64), GeometryError> {
    let p = pose.world_to_camera(point_world);
    if !(p.z > 0.0) {
        return Err(GeometryError::BehindCamera { z: p.z });
    }
    let k = Intrinsics::from_fov(&pose.fov, res);
    let pixel = Vector2::new(k.cx + k.fx * p.x / p.z, k.cy + k.fy * p.y / p.z);
    Ok((pixel, p.z))
}

pub fn unproject(
    pixel: &Vector2<f64>,
    depth: f64,
    pose: &CameraPose,
    res: Resolution,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::InvalidDepth(depth));
    }
    let k = Intrinsics::from_fov(&pose.fov, res);
    Ok(pose.camera_to_world(&k.backproject(pixel, depth)))
}
