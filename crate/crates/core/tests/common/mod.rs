#![allow(dead_code)]

use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector2, Vector3};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use recon_core::backbone::{Image, NetworkConfig};
use recon_core::geometry::{CameraPose, Quaternion};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small network used where the full toy shape would be needlessly slow.
pub fn tiny_config() -> NetworkConfig {
    NetworkConfig {
        width: 16,
        height: 16,
        patch: 4,
        channels: 16,
        layers: 2,
        heads: 2,
        anchors: 3,
        ratio: 0.5,
    }
}

pub fn random_image(cfg: &NetworkConfig, rng: &mut ChaCha8Rng) -> Image {
    Array3::from_shape_fn((cfg.height, cfg.width, 3), |_| rng.random::<f32>())
}

pub fn random_images(cfg: &NetworkConfig, n: usize, seed: u64) -> Vec<Image> {
    let mut r = rng(seed);
    (0..n).map(|_| random_image(cfg, &mut r)).collect()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Quaternion {
    let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    Quaternion::new(v[0], v[1], v[2], v[3]).expect("non-zero").canonical()
}

pub fn random_vector(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    let fov = Vector2::new(rng.random_range(0.3..2.0), rng.random_range(0.3..2.0));
    CameraPose::new(random_rotation(rng), random_vector(rng, 3.0), fov).expect("valid pose")
}

pub fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<CameraPose> {
    (0..n).map(|_| random_pose(rng)).collect()
}

/// Rotation angle of a matrix in degrees, from both its symmetric and
/// antisymmetric parts so it stays accurate near 0 and 180 degrees.
pub fn matrix_angle_deg(m: &Matrix3<f64>) -> f64 {
    let c = (m.trace() - 1.0) / 2.0;
    let s = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm() / 2.0;
    s.atan2(c).to_degrees()
}

pub fn vector_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Least-squares similarity `target ~ s R source + t` via the eigenvector
/// of Horn's 4x4 quaternion matrix.
pub fn horn_similarity(src: &[Vector3<f64>], tgt: &[Vector3<f64>], with_scale: bool) -> (f64, Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let ms: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let mt: Vector3<f64> = tgt.iter().sum::<Vector3<f64>>() / n;
    let mut m = Matrix3::zeros();
    for (a, b) in src.iter().zip(tgt) {
        m += (a - ms) * (b - mt).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    let nmat = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(nmat);
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best);
    let rot = Quaternion::new(q[0], q[1], q[2], q[3]).expect("unit").to_rotation_matrix();
    let scale = if with_scale {
        let num: f64 = src.iter().zip(tgt).map(|(a, b)| (b - mt).dot(&(rot * (a - ms)))).sum();
        let den: f64 = src.iter().map(|a| (a - ms).norm_squared()).sum();
        num / den
    } else {
        1.0
    };
    (scale, rot, mt - scale * rot * ms)
}

/// `max |a - b| / max |b|` over all elements.
pub fn relative_diff<F: Copy + Into<f64>>(a: &Array2<F>, b: &Array2<F>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = ((*x).into(), (*y).into());
        num = num.max((x - y).abs());
        den = den.max(y.abs());
    }
    num / den.max(f64::MIN_POSITIVE)
}

pub fn relative_diff3(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    let a2 = a.to_shape((a.len(), 1)).unwrap().to_owned();
    let b2 = b.to_shape((b.len(), 1)).unwrap().to_owned();
    relative_diff(&a2, &b2)
}

/// Rows `from..from + n` of a token matrix.
pub fn rows<F: Clone>(a: &Array2<F>, from: usize, n: usize) -> Array2<F> {
    a.slice(ndarray::s![from..from + n, ..]).to_owned()
}

/// Applies `x -> s Q x + u` to the world frame of every pose.
pub fn transform_world(poses: &[CameraPose], s: f64, q: &Quaternion, u: &Vector3<f64>) -> Vec<CameraPose> {
    let qm = q.to_rotation_matrix();
    poses
        .iter()
        .map(|p| {
            let r = p.rotation_matrix() * qm.transpose();
            CameraPose::from_rotation_matrix(&r, s * p.translation - r * u, p.fov).unwrap()
        })
        .collect()
}

pub fn pose_at(center: Vector3<f64>, rotation: Quaternion) -> CameraPose {
    let r = rotation.to_rotation_matrix();
    CameraPose::new(rotation, -(r * center), Vector2::new(1.0, 1.0)).unwrap()
}
