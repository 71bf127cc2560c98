use std::f64::consts::{PI, TAU};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::geometry::{project, CameraPose, Resolution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    /// Circle at fixed radius and elevation around the origin.
    Orbit,
    /// Straight sweep past the scene, always facing the origin.
    Corridor,
    /// Perturbed orbit: azimuth, elevation and radius drift randomly.
    RandomWalk,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s {
            "orbit" => Ok(TrajectoryKind::Orbit),
            "corridor" => Ok(TrajectoryKind::Corridor),
            "random-walk" => Ok(TrajectoryKind::RandomWalk),
            other => Err(SynthError::InvalidConfig(format!("unknown trajectory {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub points: usize,
    /// Side of the cube, centered at the origin, that holds all geometry.
    pub extent: f64,
    pub trajectory: TrajectoryKind,
    pub frames: usize,
    /// Horizontal and vertical field of view, radians.
    pub fov: [f64; 2],
    pub seed: u64,
    /// Orbit radius as a multiple of `extent`.
    pub distance: f64,
    /// Camera elevation above the horizontal plane, radians.
    pub elevation: f64,
    /// Amplitude of a sinusoidal elevation change along orbits, radians.
    pub elevation_wave: f64,
    /// Azimuth swept by an orbit, radians; a full turn closes the loop.
    pub arc: f64,
    /// Azimuth of the first orbit frame, radians; random when unset.
    pub start_azimuth: Option<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            points: 30_000,
            extent: 2.0,
            trajectory: TrajectoryKind::Orbit,
            frames: 24,
            fov: [1.0, 1.0],
            seed: 0,
            distance: 1.8,
            elevation: 0.4,
            elevation_wave: 0.0,
            arc: TAU,
            start_azimuth: None,
        }
    }
}

/// Minimum fraction of the scene's points each frame must see.
pub const MIN_VISIBLE_FRACTION: f64 = 0.3;
const GENERATION_ATTEMPTS: usize = 32;
/// Resolution used for the visibility check; only the frustum matters.
const VISIBILITY_RES: Resolution = Resolution { width: 64, height: 64 };

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScenePoint {
    pub position: Vector3<f64>,
    pub color: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub scene_id: String,
    pub seed: u64,
    pub fov: Vector2<f64>,
    pub points: Vec<ScenePoint>,
    /// World-to-camera poses in frame order.
    pub trajectory: Vec<CameraPose>,
}

impl SyntheticScene {
    /// Diagonal of the axis-aligned bounding box of the points.
    pub fn extent(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(&p.position);
            hi = hi.sup(&p.position);
        }
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.points.iter().map(|p| p.position).sum();
        sum / self.points.len().max(1) as f64
    }

    /// Fraction of points inside the frustum of `pose`.
    pub fn visible_fraction(&self, pose: &CameraPose) -> f64 {
        let seen = self
            .points
            .iter()
            .filter(|p| in_frustum(&p.position, pose, VISIBILITY_RES))
            .count();
        seen as f64 / self.points.len().max(1) as f64
    }
}

pub(crate) fn in_frustum(p: &Vector3<f64>, pose: &CameraPose, res: Resolution) -> bool {
    match project(p, pose, res) {
        Ok((px, _)) => {
            px.x >= -0.5 && px.y >= -0.5 && px.x < res.width as f64 - 0.5 && px.y < res.height as f64 - 0.5
        }
        Err(_) => false,
    }
}

/// Planar rectangle `center + u * a + v * b` for `u, v` in `[-1, 1]`.
struct Surface {
    center: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    palette: [Vector3<f64>; 2],
    checks: f64,
}

impl Surface {
    fn area(&self) -> f64 {
        4.0 * self.a.cross(&self.b).norm()
    }

    fn color(&self, u: f64, v: f64) -> Vector3<f64> {
        let cu = ((u + 1.0) * 0.5 * self.checks).floor() as i64;
        let cv = ((v + 1.0) * 0.5 * self.checks).floor() as i64;
        let base = self.palette[((cu + cv).rem_euclid(2)) as usize];
        // A gradient across the surface breaks the checkerboard's symmetry.
        let shade = 0.65 + 0.35 * (u + 1.0) * 0.5;
        (base * shade + Vector3::new(0.15, 0.1, 0.05) * (v + 1.0) * 0.5).map(|c| c.clamp(0.0, 1.0))
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.random(), rng.random(), rng.random())
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn make_surfaces(rng: &mut ChaCha8Rng, extent: f64) -> Vec<Surface> {
    let half = extent / 2.0;
    let mut out = Vec::new();
    // Ground plane under everything.
    out.push(Surface {
        center: Vector3::new(0.0, 0.0, -0.4 * half),
        a: Vector3::new(half, 0.0, 0.0),
        b: Vector3::new(0.0, half, 0.0),
        palette: [random_color(rng), random_color(rng)],
        checks: 8.0,
    });
    let extra = rng.random_range(1..=4);
    for _ in 0..extra {
        if rng.random_bool(0.5) {
            // Box resting on the ground; its visible faces count as one surface.
            let size = Vector3::new(
                rng.random_range(0.15..0.35) * extent,
                rng.random_range(0.15..0.35) * extent,
                rng.random_range(0.15..0.4) * extent,
            );
            let base = Vector3::new(
                rng.random_range(-0.5..0.5) * half,
                rng.random_range(-0.5..0.5) * half,
                -0.4 * half,
            );
            let c = base + Vector3::new(0.0, 0.0, size.z / 2.0);
            let palette = [random_color(rng), random_color(rng)];
            let (hx, hy, hz) = (size.x / 2.0, size.y / 2.0, size.z / 2.0);
            let faces = [
                (Vector3::new(hx, 0.0, 0.0), Vector3::new(0.0, hy, 0.0), Vector3::new(0.0, 0.0, hz)),
                (Vector3::new(-hx, 0.0, 0.0), Vector3::new(0.0, hy, 0.0), Vector3::new(0.0, 0.0, hz)),
                (Vector3::new(0.0, hy, 0.0), Vector3::new(hx, 0.0, 0.0), Vector3::new(0.0, 0.0, hz)),
                (Vector3::new(0.0, -hy, 0.0), Vector3::new(hx, 0.0, 0.0), Vector3::new(0.0, 0.0, hz)),
                (Vector3::new(0.0, 0.0, hz), Vector3::new(hx, 0.0, 0.0), Vector3::new(0.0, hy, 0.0)),
            ];
            for (offset, a, b) in faces {
                out.push(Surface {
                    center: c + offset,
                    a,
                    b,
                    palette,
                    checks: 4.0,
                });
            }
        } else {
            // Free-standing tilted panel.
            let normal = random_unit(rng);
            let t = if normal.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
            let a = normal.cross(&t).normalize();
            let b = normal.cross(&a);
            let center = Vector3::new(
                rng.random_range(-0.4..0.4) * half,
                rng.random_range(-0.4..0.4) * half,
                rng.random_range(-0.2..0.4) * half,
            );
            let a = a * rng.random_range(0.2..0.45) * extent;
            let b = b * rng.random_range(0.2..0.45) * extent;
            // Shrink panels that would poke out of the cube.
            let fit = (0..3)
                .map(|i| (half - center[i].abs()) / (a[i].abs() + b[i].abs()).max(f64::MIN_POSITIVE))
                .fold(1.0f64, f64::min);
            out.push(Surface {
                center,
                a: a * fit,
                b: b * fit,
                palette: [random_color(rng), random_color(rng)],
                checks: rng.random_range(3..8) as f64,
            });
        }
    }
    out
}

fn sample_points(rng: &mut ChaCha8Rng, surfaces: &[Surface], count: usize) -> Vec<ScenePoint> {
    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let total: f64 = areas.iter().sum();
    (0..count)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut s = &surfaces[surfaces.len() - 1];
            for (surf, &a) in surfaces.iter().zip(&areas) {
                if pick < a {
                    s = surf;
                    break;
                }
                pick -= a;
            }
            let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            ScenePoint {
                position: s.center + s.a * u + s.b * v,
                color: s.color(u, v),
            }
        })
        .collect()
}

fn spherical(radius: f64, azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(
        radius * elevation.cos() * azimuth.cos(),
        radius * elevation.cos() * azimuth.sin(),
        radius * elevation.sin(),
    )
}

fn make_trajectory(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Result<Vec<CameraPose>, SynthError> {
    let fov = Vector2::new(cfg.fov[0], cfg.fov[1]);
    let radius = cfg.distance * cfg.extent;
    let m = cfg.frames;
    let drawn = rng.random_range(0.0..TAU);
    let start = cfg.start_azimuth.unwrap_or(drawn);
    let centers: Vec<Vector3<f64>> = match cfg.trajectory {
        TrajectoryKind::Orbit => (0..m)
            .map(|i| {
                let phase = i as f64 / m as f64;
                let elev = cfg.elevation + cfg.elevation_wave * (2.0 * TAU * phase).sin();
                spherical(radius, start + cfg.arc * phase, elev)
            })
            .collect(),
        TrajectoryKind::Corridor => {
            let dir = spherical(1.0, start, 0.0);
            let side = Vector3::z().cross(&dir);
            (0..m)
                .map(|i| {
                    let s = if m > 1 { i as f64 / (m - 1) as f64 * 2.0 - 1.0 } else { 0.0 };
                    dir * radius + side * (s * cfg.extent) + Vector3::z() * (radius * cfg.elevation.sin())
                })
                .collect()
        }
        TrajectoryKind::RandomWalk => {
            let (mut az, mut el, mut r) = (start, cfg.elevation, radius);
            (0..m)
                .map(|_| {
                    let c = spherical(r, az, el);
                    az += rng.random_range(0.05..0.35);
                    el = (el + rng.random_range(-0.08..0.08)).clamp(0.1, 1.2);
                    r = (r * rng.random_range(0.95..1.05)).clamp(0.8 * radius, 1.25 * radius);
                    c
                })
                .collect()
        }
    };
    centers
        .iter()
        .map(|c| {
            CameraPose::look_at(c, &Vector3::zeros(), &Vector3::z(), fov).map_err(SynthError::from)
        })
        .collect()
}

fn check_config(cfg: &SceneConfig) -> Result<(), SynthError> {
    let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
    if cfg.frames < 2 {
        return bad("need at least 2 frames");
    }
    if cfg.points < 10 {
        return bad("need at least 10 points");
    }
    if !(cfg.extent.is_finite() && cfg.extent > 0.0) {
        return bad("extent must be positive");
    }
    if !(cfg.distance.is_finite() && cfg.distance > 0.5) {
        return bad("distance must exceed 0.5 extents");
    }
    if !cfg.fov.iter().all(|f| f.is_finite() && *f > 0.0 && *f < PI) {
        return bad("fov outside (0, pi)");
    }
    if !(cfg.arc > 0.0 && cfg.arc <= TAU) || cfg.start_azimuth.is_some_and(|a| !a.is_finite()) {
        return bad("orbit arc must lie in (0, 2 pi]");
    }
    if !(cfg.elevation.abs() < 1.4 && cfg.elevation_wave.abs() < 1.0) {
        return bad("elevation out of range");
    }
    Ok(())
}

/// Builds a textured scene and a camera path around it. Deterministic in
/// `cfg.seed`; regenerates (with a derived seed) until every frame sees at
/// least [`MIN_VISIBLE_FRACTION`] of the points.
pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene, SynthError> {
    check_config(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..GENERATION_ATTEMPTS {
        let surfaces = make_surfaces(&mut rng, cfg.extent);
        let points = sample_points(&mut rng, &surfaces, cfg.points);
        let trajectory = make_trajectory(&mut rng, cfg)?;
        let scene = SyntheticScene {
            scene_id: format!(
                "{}-{}",
                match cfg.trajectory {
                    TrajectoryKind::Orbit => "orbit",
                    TrajectoryKind::Corridor => "corridor",
                    TrajectoryKind::RandomWalk => "random-walk",
                },
                cfg.seed
            ),
            seed: cfg.seed,
            fov: Vector2::new(cfg.fov[0], cfg.fov[1]),
            points,
            trajectory,
        };
        if scene
            .trajectory
            .iter()
            .all(|p| scene.visible_fraction(p) >= MIN_VISIBLE_FRACTION)
        {
            return Ok(scene);
        }
    }
    Err(SynthError::GenerationFailed(format!(
        "no layout after {GENERATION_ATTEMPTS} attempts keeps {MIN_VISIBLE_FRACTION} of the points in every frame"
    )))
}
