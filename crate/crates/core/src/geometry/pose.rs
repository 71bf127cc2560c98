use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::{GeometryError, Quaternion};

/// Lower/upper margin applied to decoded field-of-view values (radians).
pub const FOV_EPS: f64 = 1e-3;

/// World-to-camera extrinsics plus field of view.
///
/// `x_cam = R * x_world + t`, with `R` given by `rotation`. The principal
/// point sits at the image center and there is no skew, so the two fov
/// angles fully determine the intrinsics for a given resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
    /// Horizontal and vertical field of view in radians.
    pub fov: Vector2<f64>,
}

impl CameraPose {
    pub fn new(
        rotation: Quaternion,
        translation: Vector3<f64>,
        fov: Vector2<f64>,
    ) -> Result<Self, GeometryError> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidInput("non-finite translation".into()));
        }
        check_fov(&fov)?;
        Ok(CameraPose {
            rotation,
            translation,
            fov,
        })
    }

    pub fn identity(fov: Vector2<f64>) -> Result<Self, GeometryError> {
        Self::new(Quaternion::IDENTITY, Vector3::zeros(), fov)
    }

    /// Builds a pose from a world-to-camera rotation matrix.
    pub fn from_rotation_matrix(
        rotation: &Matrix3<f64>,
        translation: Vector3<f64>,
        fov: Vector2<f64>,
    ) -> Result<Self, GeometryError> {
        Self::new(Quaternion::from_rotation_matrix(rotation), translation, fov)
    }

    /// Camera at `center` looking at `target`; image `y` points along `-up`.
    pub fn look_at(
        center: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
        fov: Vector2<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - center;
        if forward.norm() == 0.0 {
            return Err(GeometryError::InvalidInput("look_at target equals center".into()));
        }
        let z = forward.normalize();
        let x = z.cross(&(-up));
        if x.norm() < 1e-9 {
            return Err(GeometryError::InvalidInput("look_at up vector parallel to view".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        // Rows of the world-to-camera rotation are the camera axes in world coordinates.
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::from_rotation_matrix(&r, -(r * center), fov)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * (p - self.translation)
    }

    /// Same camera with every world coordinate divided by `scale`.
    pub fn scaled(&self, scale: f64) -> CameraPose {
        CameraPose {
            translation: self.translation / scale,
            ..*self
        }
    }
}

fn check_fov(fov: &Vector2<f64>) -> Result<(), GeometryError> {
    if fov.iter().all(|f| f.is_finite() && *f > 0.0 && *f < PI) {
        Ok(())
    } else {
        Err(GeometryError::InvalidInput(format!(
            "field of view ({}, {}) outside (0, pi)",
            fov.x, fov.y
        )))
    }
}

/// Network-facing 9-value pose code `[q(4), t(3), fov(2)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEncoding(pub [f64; 9]);

impl PoseEncoding {
    pub fn quaternion(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.0[4], self.0[5], self.0[6])
    }

    pub fn fov(&self) -> Vector2<f64> {
        Vector2::new(self.0[7], self.0[8])
    }
}

pub fn encode_pose(pose: &CameraPose) -> Result<PoseEncoding, GeometryError> {
    let q = pose.rotation;
    let t = pose.translation;
    let f = pose.fov;
    let g = [q.w, q.x, q.y, q.z, t.x, t.y, t.z, f.x, f.y];
    if !g.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidInput("non-finite pose".into()));
    }
    // Re-run the constructor so hand-built quaternions are canonical too.
    let q = Quaternion::new(q.w, q.x, q.y, q.z)?;
    Ok(PoseEncoding([q.w, q.x, q.y, q.z, t.x, t.y, t.z, f.x, f.y]))
}

/// Decodes raw head output: quaternion renormalized and canonicalized, fov
/// clamped to `[FOV_EPS, pi - FOV_EPS]`.
pub fn decode_pose(g: &PoseEncoding) -> Result<CameraPose, GeometryError> {
    if !g.0.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::InvalidInput("non-finite pose encoding".into()));
    }
    let rotation = Quaternion::from_array(g.quaternion())?;
    let fov = g.fov().map(|f| f.clamp(FOV_EPS, PI - FOV_EPS));
    CameraPose::new(rotation, g.translation(), fov)
}
