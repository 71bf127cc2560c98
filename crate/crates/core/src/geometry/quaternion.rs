use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::GeometryError;

/// Unit quaternion `w + xi + yj + zk` kept in canonical sign.
///
/// Canonical means `w >= 0`; when `w == 0` the first nonzero of `x, y, z` is
/// made non-negative. Every constructor normalizes and canonicalizes, so two
/// quaternions describing the same rotation compare equal component-wise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes raw components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        if ![w, x, y, z].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidInput(format!(
                "non-finite quaternion ({w}, {x}, {y}, {z})"
            )));
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(GeometryError::DegenerateRotation);
        }
        Ok(Quaternion {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        }
        .canonical())
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self, GeometryError> {
        let n = axis.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(GeometryError::InvalidInput("zero rotation axis".into()));
        }
        let a = axis / n;
        let (s, c) = (angle * 0.5).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        let q = uq.quaternion();
        // from_rotation_matrix yields a unit quaternion; only the sign needs fixing.
        Quaternion {
            w: q.w,
            x: q.i,
            y: q.j,
            z: q.k,
        }
        .canonical()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn canonical(self) -> Self {
        if canonical_sign(self.w, self.x, self.y, self.z) < 0.0 {
            Quaternion {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    pub fn conjugate(&self) -> Self {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
        .canonical()
    }

    /// Hamilton product `self * rhs`, canonicalized.
    pub fn mul(&self, rhs: &Quaternion) -> Self {
        let (a, b) = (self, rhs);
        Quaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
        .canonical()
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_rotation_matrix() * v
    }
}

/// Sign (+1 or -1) that maps `(w, x, y, z)` into canonical form.
pub(crate) fn canonical_sign(w: f64, x: f64, y: f64, z: f64) -> f64 {
    if w > 0.0 {
        return 1.0;
    }
    if w < 0.0 {
        return -1.0;
    }
    for v in [x, y, z] {
        if v > 0.0 {
            return 1.0;
        }
        if v < 0.0 {
            return -1.0;
        }
    }
    1.0
}
