//! Closed-form least-squares alignment of corresponding 3D point sets.

use nalgebra::{Matrix3, Vector3};

use super::GeometryError;

/// `target ≈ scale * rotation * source + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }
}

/// Weighted Umeyama alignment. With `with_scale == false` the scale is fixed
/// to 1 (rigid alignment). Reflections are removed by flipping the sign of
/// the weakest singular direction, so the rotation always has `det = +1`.
pub fn umeyama(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    weights: Option<&[f64]>,
    with_scale: bool,
) -> Result<Similarity, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::InvalidInput(format!(
            "{} source points vs {} target points",
            source.len(),
            target.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != source.len() {
            return Err(GeometryError::InvalidInput("weight count mismatch".into()));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GeometryError::InvalidInput("weights must be finite and non-negative".into()));
        }
    }
    if source.len() < 3 {
        return Err(GeometryError::InsufficientCorrespondences { found: source.len() });
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..source.len()).map(weight).sum();
    if !(total > 0.0) {
        return Err(GeometryError::DegenerateGeometry("all weights are zero".into()));
    }

    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for (i, (s, t)) in source.iter().zip(target).enumerate() {
        mu_s += s * weight(i);
        mu_t += t * weight(i);
    }
    mu_s /= total;
    mu_t /= total;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (i, (s, t)) in source.iter().zip(target).enumerate() {
        let ds = s - mu_s;
        let dt = t - mu_t;
        cov += weight(i) * dt * ds.transpose();
        var_s += weight(i) * ds.norm_squared();
    }
    cov /= total;
    var_s /= total;

    let svd = cov.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateGeometry("SVD failed".into())),
    };
    let d = svd.singular_values;
    let mut sorted = [d[0], d[1], d[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= 1e-12 * sorted[0] {
        return Err(GeometryError::DegenerateGeometry(
            "cross-covariance has rank < 2 (collinear or coincident points)".into(),
        ));
    }

    let weakest = (0..3)
        .min_by(|&a, &b| d[a].total_cmp(&d[b]))
        .unwrap_or(2);
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        signs[weakest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = if with_scale {
        if !(var_s > 0.0) {
            return Err(GeometryError::DegenerateGeometry("source has zero spread".into()));
        }
        d.component_mul(&signs).sum() / var_s
    } else {
        1.0
    };
    let translation = mu_t - scale * rotation * mu_s;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(1.0, 1.0, 1.0),
        ]
    }

    #[test]
    fn identical_sets_give_identity() {
        let s = umeyama(&cloud(), &cloud(), None, true).unwrap();
        assert!((s.scale - 1.0).abs() < 1e-12);
        assert!((s.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(s.translation.norm() < 1e-12);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            umeyama(&line, &line, None, false),
            Err(GeometryError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn too_few_points() {
        let p = &cloud()[..2];
        assert!(matches!(
            umeyama(p, p, None, false),
            Err(GeometryError::InsufficientCorrespondences { found: 2 })
        ));
    }

    #[test]
    fn zero_weights_drop_outliers() {
        let src = cloud();
        let mut dst: Vec<_> = src.iter().map(|p| p + Vector3::new(0.5, -1.0, 2.0)).collect();
        dst.push(Vector3::new(100.0, 100.0, 100.0));
        let mut src2 = src.clone();
        src2.push(Vector3::zeros());
        let w = [1.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let s = umeyama(&src2, &dst, Some(&w), false).unwrap();
        assert!((s.translation - Vector3::new(0.5, -1.0, 2.0)).norm() < 1e-12);
    }
}
