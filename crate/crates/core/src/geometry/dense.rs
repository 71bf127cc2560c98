use nalgebra::{Vector2, Vector3};
use ndarray::{Array2, Array3};

use super::{umeyama, CameraPose, GeometryError, Intrinsics, Resolution};

/// Per-pixel depth and scene coordinates with their confidences.
///
/// All grids are indexed `[row, column]` (`[y, x]`); `scm` carries the world
/// point in its last axis. Confidences are `>= 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOutput {
    pub depth: Array2<f64>,
    pub depth_conf: Array2<f64>,
    pub scm: Array3<f64>,
    pub scm_conf: Array2<f64>,
    pub valid: Array2<bool>,
}

impl DenseOutput {
    /// All pixels invalid, confidences at their minimum.
    pub fn empty(res: Resolution) -> Self {
        let shape = (res.height, res.width);
        DenseOutput {
            depth: Array2::zeros(shape),
            depth_conf: Array2::ones(shape),
            scm: Array3::zeros((res.height, res.width, 3)),
            scm_conf: Array2::ones(shape),
            valid: Array2::from_elem(shape, false),
        }
    }

    pub fn resolution(&self) -> Resolution {
        let (h, w) = self.depth.dim();
        Resolution::new(w, h)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn scm_at(&self, y: usize, x: usize) -> Vector3<f64> {
        Vector3::new(self.scm[[y, x, 0]], self.scm[[y, x, 1]], self.scm[[y, x, 2]])
    }

    /// Divides depth and scene coordinates by `scale`.
    pub fn scaled(&self, scale: f64) -> DenseOutput {
        DenseOutput {
            depth: &self.depth / scale,
            scm: &self.scm / scale,
            ..self.clone()
        }
    }
}

/// World coordinates of every valid pixel, unprojected through the pixel
/// center at the stored depth. Invalid pixels are left at zero.
pub fn scm_from_depth(dense: &DenseOutput, pose: &CameraPose, res: Resolution) -> Array3<f64> {
    let k = Intrinsics::from_fov(&pose.fov, res);
    let mut out = Array3::zeros((res.height, res.width, 3));
    for y in 0..res.height {
        for x in 0..res.width {
            let d = dense.depth[[y, x]];
            if !dense.valid[[y, x]] || !(d > 0.0) {
                continue;
            }
            let cam = k.backproject(&Vector2::new(x as f64, y as f64), d);
            let w = pose.camera_to_world(&cam);
            for c in 0..3 {
                out[[y, x, c]] = w[c];
            }
        }
    }
    out
}

/// Recovers the camera from its own depth and scene-coordinate maps.
///
/// Each usable pixel yields a camera-frame point (depth backprojected through
/// the intrinsics implied by `fov`) and a world point (the SCM entry). The
/// rigid transform between the two sets is solved in closed form, weighting
/// each pixel by `depth_conf * scm_conf`. Pixels with either confidence below
/// `min_conf` are ignored.
pub fn pose_from_scm(
    dense: &DenseOutput,
    fov: &Vector2<f64>,
    res: Resolution,
    min_conf: f64,
) -> Result<CameraPose, GeometryError> {
    let k = Intrinsics::from_fov(fov, res);
    let mut cam_points = Vec::new();
    let mut world_points = Vec::new();
    let mut weights = Vec::new();
    for y in 0..res.height {
        for x in 0..res.width {
            let d = dense.depth[[y, x]];
            let (cd, cs) = (dense.depth_conf[[y, x]], dense.scm_conf[[y, x]]);
            if !dense.valid[[y, x]] || !(d > 0.0) || cd < min_conf || cs < min_conf {
                continue;
            }
            cam_points.push(k.backproject(&Vector2::new(x as f64, y as f64), d));
            world_points.push(dense.scm_at(y, x));
            weights.push(cd * cs);
        }
    }
    if cam_points.len() < 3 {
        return Err(GeometryError::InsufficientCorrespondences {
            found: cam_points.len(),
        });
    }
    // camera -> world
    let fit = umeyama(&cam_points, &world_points, Some(&weights), false)?;
    let r = fit.rotation.transpose();
    CameraPose::from_rotation_matrix(&r, -(r * fit.translation), *fov)
}
