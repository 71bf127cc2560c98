//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line to the
//! real stdout (bypassing the harness capture) and then asserts.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use rand::Rng;

use common::*;
use recon_core::attention::{bind, Graph, ParamTree};
use recon_core::backbone::{
    joint_forward, read_checkpoint, read_representation, sample_visibility, write_checkpoint,
    write_representation, DenseVars, FrameResult, GlobalAttention, Image, Network, NetworkConfig,
    Weights,
};
use recon_core::evalkit::{ate_rmse, maa, pair_errors, rms_spread, rra_rta, Alignment};
use recon_core::geometry::{
    decode_pose, encode_pose, mean_reference_distance, normalize_scene, pose_from_scm, CameraPose,
    DenseOutput, PoseEncoding, Quaternion, Resolution,
};
use recon_core::losses::{
    camera_loss, camera_loss_grad, depth_loss, depth_loss_grad, graph_loss, relative_error, scm_loss,
    scm_loss_grad, total_loss, FramePrediction, FrameTarget, LossConfig,
};
use recon_core::pipeline::{
    evaluate_held_out, reconstruct, reconstruct_images, HeldOutEval, ReconstructInput,
    ReconstructOptions, TrainConfig, TrainMode, Trainer,
};
use recon_core::synth::{generate_scene, render_frame, write_scene, SceneConfig, TrajectoryKind};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {criterion}: {verdict} ({detail})").expect("stdout");
    out.flush().expect("stdout");
}

// ---------------------------------------------------------------------------
// 1. Mask/cache equivalence

const C1_SEEDS: u64 = 50;
const C1_TOLERANCE: f64 = 1e-5;
const C1_MAX_SECONDS: f64 = 60.0;

fn dense_diff(a: &DenseOutput, b: &DenseOutput) -> f64 {
    relative_diff(&a.depth, &b.depth)
        .max(relative_diff(&a.depth_conf, &b.depth_conf))
        .max(relative_diff(&a.scm_conf, &b.scm_conf))
        .max(relative_diff3(&a.scm, &b.scm))
}

fn pose_row(p: &CameraPose) -> Array2<f64> {
    Array2::from_shape_vec((1, 9), encode_pose(p).unwrap().0.to_vec()).unwrap()
}

fn result_diff(a: &FrameResult, b: &FrameResult) -> f64 {
    relative_diff(&pose_row(&a.pose), &pose_row(&b.pose)).max(dense_diff(&a.dense, &b.dense))
}

#[test]
fn criterion_1_mask_cache_equivalence() {
    let start = Instant::now();
    let cfg = NetworkConfig::default();
    let t = cfg.tokens_per_frame();
    let ratios = [0.1, 0.2, 0.5, 1.0];
    let mut worst = 0.0f64;
    for seed in 0..C1_SEEDS {
        let net = Network::<f64>::init(cfg, seed).unwrap();
        let n_anchor = 1 + (seed % 3) as usize;
        let n_query = 1 + (seed % 2) as usize;
        let r = ratios[seed as usize % ratios.len()];
        let images = random_images(&cfg, n_anchor + n_query, 1000 + seed);
        let all: Vec<&Image> = images.iter().collect();
        let visible = sample_visibility(&cfg, n_anchor, r, seed).unwrap();
        let masked = net
            .joint(&all, GlobalAttention::Localization { anchors: n_anchor, visible: &visible })
            .unwrap();
        let (rep, _) = net.regress_scene(&all[..n_anchor], r, seed).unwrap();
        let cached = net.localize_trace(&all[n_anchor..], &rep).unwrap();
        for j in 0..cfg.layers {
            worst = worst.max(relative_diff(&rows(&masked.after_frame[j], n_anchor * t, n_query * t), &cached.after_frame[j]));
            worst = worst.max(relative_diff(&rows(&masked.layer_out[j], n_anchor * t, n_query * t), &cached.layer_out[j]));
        }
        worst = worst.max(relative_diff(&rows(&masked.poses, n_anchor, n_query), &cached.poses));
        for q in 0..n_query {
            worst = worst.max(result_diff(&masked.results[n_anchor + q], &cached.results[q]));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= C1_TOLERANCE && secs < C1_MAX_SECONDS;
    report(1, pass, &format!("{C1_SEEDS} seeds, worst relative diff {worst:.2e} <= {C1_TOLERANCE:.0e}, {secs:.1}s < {C1_MAX_SECONDS}s"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. Query independence and batching invariance

const C2_TOLERANCE: f64 = 1e-5;

#[test]
fn criterion_2_query_independence() {
    let cfg = NetworkConfig::default();
    let t = cfg.tokens_per_frame();
    let net = Network::<f32>::init(cfg, 11).unwrap();
    let n_anchor = 4;
    let n_query = 9;
    let images = random_images(&cfg, n_anchor + n_query, 12);
    let all: Vec<&Image> = images.iter().collect();
    let (anchors, queries) = all.split_at(n_anchor);
    let (rep, _) = net.regress_scene(anchors, cfg.ratio, 13).unwrap();

    let alone: Vec<FrameResult> = queries.iter().map(|q| net.localize(q, &rep).unwrap()).collect();
    let mut worst = 0.0f64;
    for bs in [1, 4, n_query] {
        let batched = net.localize_batch(queries, &rep, bs).unwrap();
        for (a, b) in batched.iter().zip(&alone) {
            worst = worst.max(result_diff(a, b));
        }
    }
    let reversed: Vec<&Image> = queries.iter().rev().copied().collect();
    let rev = net.localize_batch(&reversed, &rep, n_query).unwrap();
    for (a, b) in rev.iter().rev().zip(&alone) {
        worst = worst.max(result_diff(a, b));
    }
    // Query 0 co-batched with different company.
    for others in [vec![3usize, 5], vec![8, 1, 2, 7]] {
        let mut batch = vec![queries[0]];
        batch.extend(others.iter().map(|&i| queries[i]));
        let got = net.localize_batch(&batch, &rep, batch.len()).unwrap();
        worst = worst.max(result_diff(&got[0], &alone[0]));
    }

    // Anchor rows of a masked pass must not depend on appended queries.
    let visible = sample_visibility(&cfg, n_anchor, cfg.ratio, 13).unwrap();
    let base = net.joint(anchors, GlobalAttention::Joint).unwrap();
    let mut anchors_exact = true;
    for extra in [1, 3, n_query] {
        let tr = net
            .joint(&all[..n_anchor + extra], GlobalAttention::Localization { anchors: n_anchor, visible: &visible })
            .unwrap();
        for j in 0..cfg.layers {
            anchors_exact &= rows(&tr.after_frame[j], 0, n_anchor * t) == base.after_frame[j];
            anchors_exact &= rows(&tr.layer_out[j], 0, n_anchor * t) == base.layer_out[j];
        }
        anchors_exact &= rows(&tr.camera_tokens, 0, n_anchor) == base.camera_tokens;
        anchors_exact &= rows(&tr.poses, 0, n_anchor) == base.poses;
    }
    let pass = worst <= C2_TOLERANCE && anchors_exact;
    report(2, pass, &format!("worst query diff {worst:.2e} <= {C2_TOLERANCE:.0e}, anchor tokens bit-exact: {anchors_exact}"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. Gradient suite

const C3_SEEDS: u64 = 10;
const C3_ISOLATED_TOLERANCE: f64 = 1e-4;
const C3_BACKBONE_TOLERANCE: f64 = 1e-3;
const C3_MAX_SECONDS: f64 = 300.0;
const C3_ISOLATED_STEP: f64 = 1e-6;
const C3_BACKBONE_STEP: f64 = 1e-5;
const C3_BACKBONE_SAMPLES: usize = 20;
// Random residuals closer than this to an L1 kink are nudged away so the
// finite difference never straddles one.
const C3_KINK_MARGIN: f64 = 1e-3;

fn away_from_zero(v: f64) -> f64 {
    if v.abs() < C3_KINK_MARGIN {
        v.signum() * C3_KINK_MARGIN + v
    } else {
        v
    }
}

fn random_prediction(res: Resolution, rng: &mut rand_chacha::ChaCha8Rng) -> (FramePrediction, FrameTarget) {
    let (h, w) = (res.height, res.width);
    let mut gt = DenseOutput::empty(res);
    gt.depth = Array2::from_shape_fn((h, w), |_| rng.random_range(0.5..3.0));
    gt.scm = ndarray::Array3::from_shape_fn((h, w, 3), |_| rng.random_range(-2.0..2.0));
    gt.valid = Array2::from_shape_fn((h, w), |_| rng.random_bool(0.8));
    let mut pred = DenseOutput::empty(res);
    pred.depth = gt.depth.mapv(|d| d + away_from_zero(rng.random_range(-0.5..0.5)));
    pred.scm = gt.scm.mapv(|s| s + away_from_zero(rng.random_range(-0.5..0.5)));
    pred.depth_conf = Array2::from_shape_fn((h, w), |_| 1.0 + rng.random_range(0.0..3.0));
    pred.scm_conf = Array2::from_shape_fn((h, w), |_| 1.0 + rng.random_range(0.0..3.0));
    let gt_pose = random_pose(rng);
    let g = encode_pose(&gt_pose).unwrap();
    let p = PoseEncoding(std::array::from_fn(|i| g.0[i] + away_from_zero(rng.random_range(-0.3..0.3))));
    (
        FramePrediction { pose: p, dense: pred },
        FrameTarget { pose: g, dense: gt },
    )
}

/// Central differences of `f` at every element of `x`, compared with
/// `analytic`. Returns the worst relative error.
fn check_all(x: &Array2<f64>, analytic: &Array2<f64>, step: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let v = x.as_slice().unwrap()[idx];
        probe.as_slice_mut().unwrap()[idx] = v + step;
        let up = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = v - step;
        let down = f(&probe);
        probe.as_slice_mut().unwrap()[idx] = v;
        worst = worst.max(relative_error(analytic.as_slice().unwrap()[idx], (up - down) / (2.0 * step)));
    }
    worst
}

fn isolated_loss_errors(seed: u64) -> [f64; 4] {
    let mut rng = rng(seed);
    let res = Resolution::new(6, 5);
    let cfg = LossConfig::default();
    let (pred, target) = random_prediction(res, &mut rng);

    let (_, cam_grad) = camera_loss_grad(&pred.pose, &target.pose).unwrap();
    let cam_x = Array2::from_shape_vec((1, 9), pred.pose.0.to_vec()).unwrap();
    let cam_a = Array2::from_shape_vec((1, 9), cam_grad.to_vec()).unwrap();
    let cam = check_all(&cam_x, &cam_a, C3_ISOLATED_STEP, |x| {
        camera_loss(&PoseEncoding(std::array::from_fn(|i| x[[0, i]])), &target.pose).unwrap()
    });

    let d = &pred.dense;
    let gt = &target.dense;
    let dt = depth_loss_grad(&d.depth, &d.depth_conf, &gt.depth, &gt.valid, &cfg).unwrap();
    let depth = check_all(&d.depth, &dt.grad_pred.index_axis(ndarray::Axis(2), 0).to_owned(), C3_ISOLATED_STEP, |x| {
        depth_loss(x, &d.depth_conf, &gt.depth, &gt.valid, &cfg).unwrap()
    })
    .max(check_all(&d.depth_conf, &dt.grad_conf, C3_ISOLATED_STEP, |c| {
        depth_loss(&d.depth, c, &gt.depth, &gt.valid, &cfg).unwrap()
    }));

    let st = scm_loss_grad(&d.scm, &d.scm_conf, &gt.scm, &gt.valid, &cfg).unwrap();
    let flat = |a: &ndarray::Array3<f64>| a.to_shape((res.height, res.width * 3)).unwrap().to_owned();
    let scm = check_all(&flat(&d.scm), &flat(&st.grad_pred), C3_ISOLATED_STEP, |x| {
        let x3 = x.to_shape((res.height, res.width, 3)).unwrap().to_owned();
        scm_loss(&x3, &d.scm_conf, &gt.scm, &gt.valid, &cfg).unwrap()
    })
    .max(check_all(&d.scm_conf, &st.grad_conf, C3_ISOLATED_STEP, |c| {
        scm_loss(&d.scm, c, &gt.scm, &gt.valid, &cfg).unwrap()
    }));

    // Total over two frames through the graph, against the plain-value route.
    let (pred2, target2) = random_prediction(res, &mut rng);
    let preds = [pred, pred2];
    let targets = [target, target2];
    let total = total_graph_error(&preds, &targets, &cfg);
    [cam, depth, scm, total]
}

fn total_graph_error(preds: &[FramePrediction], targets: &[FrameTarget], cfg: &LossConfig) -> f64 {
    let n = preds.len();
    let (h, w) = preds[0].dense.depth.dim();
    let pose_x = Array2::from_shape_fn((n, 9), |(f, i)| preds[f].pose.0[i]);
    let mut g = Graph::<f64>::new();
    let poses = g.param(pose_x.clone());
    let mut dense = Vec::new();
    let mut leaves = vec![poses];
    for p in preds {
        let dv = DenseVars {
            depth: g.param(p.dense.depth.clone()),
            depth_conf: g.param(p.dense.depth_conf.clone()),
            scm: g.param(p.dense.scm.to_shape((h, 3 * w)).unwrap().to_owned()),
            scm_conf: g.param(p.dense.scm_conf.clone()),
        };
        leaves.extend([dv.depth, dv.depth_conf, dv.scm, dv.scm_conf]);
        dense.push(dv);
    }
    let (root, _) = graph_loss(&mut g, poses, &dense, targets, cfg).unwrap();
    let mut grads = g.backward(root);
    let values: Vec<Array2<f64>> = leaves.iter().map(|&v| g.value(v).clone()).collect();
    let analytic: Vec<Array2<f64>> = leaves.iter().map(|&v| grads.take(v).unwrap()).collect();

    let eval = |vals: &[Array2<f64>]| -> f64 {
        let predictions: Vec<FramePrediction> = (0..n)
            .map(|f| {
                let b = 1 + 4 * f;
                FramePrediction {
                    pose: PoseEncoding(std::array::from_fn(|i| vals[0][[f, i]])),
                    dense: DenseOutput {
                        depth: vals[b].clone(),
                        depth_conf: vals[b + 1].clone(),
                        scm: vals[b + 2].to_shape((h, w, 3)).unwrap().to_owned(),
                        scm_conf: vals[b + 3].clone(),
                        valid: Array2::from_elem((h, w), true),
                    },
                }
            })
            .collect();
        total_loss(&predictions, targets, cfg).unwrap().total
    };
    let mut worst = 0.0f64;
    for k in 0..values.len() {
        let mut vals = values.clone();
        worst = worst.max(check_all(&values[k], &analytic[k], C3_ISOLATED_STEP, |x| {
            vals[k] = x.clone();
            eval(&vals)
        }));
    }
    worst
}

fn backbone_error(seed: u64) -> f64 {
    let cfg = NetworkConfig::default();
    let scene = generate_scene(&SceneConfig {
        points: 4000,
        frames: 3,
        seed,
        ..SceneConfig::default()
    })
    .unwrap();
    let res = cfg.resolution();
    let rendered: Vec<(Image, DenseOutput)> = scene.trajectory.iter().map(|p| render_frame(&scene, p, res)).collect();
    let images: Vec<&Image> = rendered.iter().map(|(i, _)| i).collect();
    let targets: Vec<FrameTarget> = rendered
        .iter()
        .zip(&scene.trajectory)
        .map(|((_, d), p)| FrameTarget { pose: encode_pose(p).unwrap(), dense: d.clone() })
        .collect();
    let visible = sample_visibility(&cfg, 2, 0.5, seed).unwrap();
    let loss_cfg = LossConfig::default();
    let weights: Weights<Array2<f64>> = Weights::init(&cfg, seed);
    let forward = |w: &Weights<Array2<f64>>, grads: bool| -> (f64, Vec<Array2<f64>>) {
        let mut g = if grads { Graph::<f64>::new() } else { Graph::<f64>::inference() };
        let wv = if grads { bind(&mut g, w) } else { recon_core::attention::bind_constant(&mut g, w) };
        let attention = GlobalAttention::Localization { anchors: 2, visible: &visible };
        let out = joint_forward(&mut g, &wv, &cfg, &images, attention).unwrap();
        let (root, report) = graph_loss(&mut g, out.poses, &out.dense, &targets, &loss_cfg).unwrap();
        if !grads {
            return (report.total, Vec::new());
        }
        let mut gr = g.backward(root);
        let mut leaves = Vec::new();
        wv.visit("", &mut |_, v| leaves.push(*v));
        (report.total, leaves.into_iter().map(|v| gr.take(v).unwrap_or_else(|| Array2::zeros(g.shape(v)))).collect())
    };
    let (_, analytic) = forward(&weights, true);
    let sizes: Vec<usize> = analytic.iter().map(|a| a.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = rng(seed ^ 0xD1B5);
    let mut worst = 0.0f64;
    for _ in 0..C3_BACKBONE_SAMPLES {
        let mut flat = rng.random_range(0..total);
        let leaf = sizes.iter().position(|&s| if flat < s { true } else { flat -= s; false }).unwrap();
        let perturbed = |delta: f64| {
            let mut w = weights.clone();
            let mut i = 0;
            w.visit_mut("", &mut |_, a| {
                if i == leaf {
                    a.as_slice_mut().unwrap()[flat] += delta;
                }
                i += 1;
            });
            forward(&w, false).0
        };
        let numeric = (perturbed(C3_BACKBONE_STEP) - perturbed(-C3_BACKBONE_STEP)) / (2.0 * C3_BACKBONE_STEP);
        worst = worst.max(relative_error(analytic[leaf].as_slice().unwrap()[flat], numeric));
    }
    worst
}

#[test]
fn criterion_3_gradient_suite() {
    let start = Instant::now();
    let mut isolated = [0.0f64; 4];
    let mut backbone = 0.0f64;
    for seed in 0..C3_SEEDS {
        for (w, e) in isolated.iter_mut().zip(isolated_loss_errors(seed)) {
            *w = w.max(e);
        }
        backbone = backbone.max(backbone_error(seed));
    }
    let secs = start.elapsed().as_secs_f64();
    let iso = isolated.iter().copied().fold(0.0, f64::max);
    let pass = iso <= C3_ISOLATED_TOLERANCE && backbone <= C3_BACKBONE_TOLERANCE && secs < C3_MAX_SECONDS;
    report(
        3,
        pass,
        &format!(
            "{C3_SEEDS} seeds, camera/depth/scm/total {:.1e}/{:.1e}/{:.1e}/{:.1e} <= {C3_ISOLATED_TOLERANCE:.0e}, backbone {backbone:.1e} <= {C3_BACKBONE_TOLERANCE:.0e}, {secs:.0}s",
            isolated[0], isolated[1], isolated[2], isolated[3]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. Geometry oracles

const C4_ROUND_TRIP: f64 = 1e-9;
const C4_SCM_POSE: f64 = 1e-6;
const C4_NORMALIZE: f64 = 1e-9;

fn pose_distance(a: &CameraPose, b: &CameraPose) -> (f64, f64) {
    let rel = a.rotation_matrix() * b.rotation_matrix().transpose();
    (matrix_angle_deg(&rel).to_radians(), (a.translation - b.translation).norm())
}

#[test]
fn criterion_4_geometry_oracles() {
    let mut rng = rng(4);
    let mut round_trip = 0.0f64;
    for _ in 0..2000 {
        let p = random_pose(&mut rng);
        let g = encode_pose(&p).unwrap();
        let back = decode_pose(&g).unwrap();
        let (r, t) = pose_distance(&p, &back);
        round_trip = round_trip.max(r).max(t).max((p.fov - back.fov).abs().max());
        let again = encode_pose(&back).unwrap();
        for (x, y) in g.0.iter().zip(&again.0) {
            round_trip = round_trip.max((x - y).abs());
        }
    }

    let res = Resolution::new(64, 64);
    let mut scm_pose = (0.0f64, 0.0f64);
    for (k, kind) in [TrajectoryKind::Orbit, TrajectoryKind::Corridor, TrajectoryKind::RandomWalk].into_iter().enumerate() {
        let scene = generate_scene(&SceneConfig {
            trajectory: kind,
            frames: 6,
            seed: 40 + k as u64,
            ..SceneConfig::default()
        })
        .unwrap();
        for pose in &scene.trajectory {
            let (_, dense) = render_frame(&scene, pose, res);
            let est = pose_from_scm(&dense, &scene.fov, res, 0.5).unwrap();
            let (r, t) = pose_distance(&est, pose);
            scm_pose = (scm_pose.0.max(r), scm_pose.1.max(t));
        }
    }

    let mut normalized = 0.0f64;
    let mut equivariant = true;
    for _ in 0..50 {
        let poses = random_trajectory(&mut rng, 4);
        let points: Vec<Vec<Vector3<f64>>> = (0..3)
            .map(|_| (0..rng.random_range(1..40)).map(|_| random_vector(&mut rng, 5.0)).collect())
            .collect();
        let r = rng.random_range(0..poses.len());
        let n = normalize_scene(&poses, &points, r).unwrap();
        normalized = normalized.max((mean_reference_distance(&n.poses, &n.points, r).unwrap() - 1.0).abs());
        for k in [0.25, 2.0, 8.0] {
            let sp: Vec<CameraPose> = poses.iter().map(|p| p.scaled(1.0 / k)).collect();
            let spts: Vec<Vec<Vector3<f64>>> = points.iter().map(|s| s.iter().map(|p| p * k).collect()).collect();
            let m = normalize_scene(&sp, &spts, r).unwrap();
            equivariant &= m.poses == n.poses && m.points == n.points && m.scale == n.scale * k;
        }
    }

    let pass = round_trip <= C4_ROUND_TRIP
        && scm_pose.0 <= C4_SCM_POSE
        && scm_pose.1 <= C4_SCM_POSE
        && normalized <= C4_NORMALIZE
        && equivariant;
    report(
        4,
        pass,
        &format!(
            "round trip {round_trip:.1e} <= {C4_ROUND_TRIP:.0e}, scm pose {:.1e} rad / {:.1e} <= {C4_SCM_POSE:.0e}, normalized mean {normalized:.1e} <= {C4_NORMALIZE:.0e}, scale-equivariant: {equivariant}",
            scm_pose.0, scm_pose.1
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

const C5_TOLERANCE: f64 = 1e-9;
const C5_GAUGE_TRIALS: usize = 100;
const C5_THRESHOLDS: [f64; 4] = [5.0, 10.0, 15.0, 30.0];

struct OracleMetrics {
    rra: Vec<f64>,
    rta: Vec<f64>,
    maa: f64,
    ate: f64,
    angles: Vec<(f64, f64)>,
}

/// Direct enumeration over all pairs with rotation matrices and camera
/// centers, independent of the library's quaternion route.
fn oracle_metrics(est: &[CameraPose], gt: &[CameraPose]) -> OracleMetrics {
    let n = est.len();
    let mut angles = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let rel = |p: &[CameraPose]| -> (Matrix3<f64>, Vector3<f64>) {
                let ri = p[i].rotation_matrix();
                (ri * p[j].rotation_matrix().transpose(), ri * (p[j].center() - p[i].center()))
            };
            let (re, te) = rel(est);
            let (rg, tg) = rel(gt);
            angles.push((matrix_angle_deg(&(re * rg.transpose())), vector_angle_deg(&te, &tg)));
        }
    }
    let count = |pred: &dyn Fn(&(f64, f64)) -> bool| angles.iter().filter(|a| pred(a)).count() as f64 / angles.len() as f64;
    let rra = C5_THRESHOLDS.iter().map(|&t| count(&|a| a.0 < t)).collect();
    let rta = C5_THRESHOLDS.iter().map(|&t| count(&|a| a.1 < t)).collect();
    let maa = (1..=30).map(|t| count(&|a| a.0.max(a.1) < t as f64)).sum::<f64>() / 30.0;

    let gc: Vec<Vector3<f64>> = gt.iter().map(|p| p.center()).collect();
    let mean: Vector3<f64> = gc.iter().sum::<Vector3<f64>>() / n as f64;
    let spread = (gc.iter().map(|c| (c - mean).norm_squared()).sum::<f64>() / n as f64).sqrt();
    let gc: Vec<Vector3<f64>> = gc.iter().map(|c| c / spread).collect();
    let ec: Vec<Vector3<f64>> = est.iter().map(|p| p.center()).collect();
    let (s, r, t) = horn_similarity(&ec, &gc, true);
    let ate = (ec.iter().zip(&gc).map(|(e, g)| (s * r * e + t - g).norm_squared()).sum::<f64>() / n as f64).sqrt();
    OracleMetrics { rra, rta, maa, ate, angles }
}

fn library_metrics(est: &[CameraPose], gt: &[CameraPose]) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let (rra, rta) = rra_rta(est, gt, &C5_THRESHOLDS).unwrap();
    (rra, rta, maa(est, gt, 30).unwrap(), ate_rmse(est, gt, Alignment::Sim3).unwrap())
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Perturbs a ground-truth trajectory into a plausible estimate.
fn noisy_estimate(gt: &[CameraPose], rng: &mut rand_chacha::ChaCha8Rng, noise: f64) -> Vec<CameraPose> {
    gt.iter()
        .map(|p| {
            let axis = random_vector(rng, 1.0);
            let dq = Quaternion::from_axis_angle(&axis, rng.random_range(0.0..noise)).unwrap();
            let c = p.center() + random_vector(rng, noise);
            let rot = p.rotation.mul(&dq);
            let r = rot.to_rotation_matrix();
            CameraPose::new(rot, -(r * c), p.fov).unwrap()
        })
        .collect()
}

#[test]
fn criterion_5_metric_oracles() {
    let mut rng = rng(5);
    let mut oracle_diff = 0.0f64;
    for trial in 0..40 {
        let n = 3 + trial % 18;
        let gt = random_trajectory(&mut rng, n);
        let est = noisy_estimate(&gt, &mut rng, 0.2 + 0.1 * (trial % 5) as f64);
        let o = oracle_metrics(&est, &gt);
        let (rra, rta, m, ate) = library_metrics(&est, &gt);
        oracle_diff = oracle_diff
            .max(max_abs(&rra, &o.rra))
            .max(max_abs(&rta, &o.rta))
            .max((m - o.maa).abs())
            .max((ate - o.ate).abs());
        for (p, (r, t)) in pair_errors(&est, &gt).unwrap().iter().zip(&o.angles) {
            oracle_diff = oracle_diff.max((p.rotation - r).abs()).max((p.translation.unwrap() - t).abs());
        }
    }

    let gt = random_trajectory(&mut rng, 12);
    let est = noisy_estimate(&gt, &mut rng, 0.3);
    let base = library_metrics(&est, &gt);
    let mut gauge = 0.0f64;
    for _ in 0..C5_GAUGE_TRIALS {
        let s = rng.random_range(0.1..10.0);
        let moved = transform_world(&est, s, &random_rotation(&mut rng), &random_vector(&mut rng, 20.0));
        let m = library_metrics(&moved, &gt);
        gauge = gauge
            .max(max_abs(&m.0, &base.0))
            .max(max_abs(&m.1, &base.1))
            .max((m.2 - base.2).abs())
            .max((m.3 - base.3).abs());
    }

    // Hand-built cases. Frames 1 and 2 are rotated about the world z axis by
    // +4.5 and -4.5 degrees, so the pair (1, 2) is off by 9 degrees and the
    // other two by 4.5: RRA@5 = 2/3.
    let z = Vector3::z();
    let centers = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.5)];
    let gt3: Vec<CameraPose> = centers.iter().map(|c| pose_at(*c, Quaternion::IDENTITY)).collect();
    let est3: Vec<CameraPose> = [0.0f64, 4.5, -4.5]
        .iter()
        .zip(&centers)
        .map(|(deg, c)| pose_at(*c, Quaternion::from_axis_angle(&z, deg.to_radians()).unwrap().conjugate()))
        .collect();
    let (rra3, _) = rra_rta(&est3, &gt3, &[5.0, 10.0]).unwrap();
    let hand_rra = rra3 == vec![2.0 / 3.0, 1.0];

    // One pair with 10.5 degrees of rotation and translation-direction error:
    // thresholds 11..=30 accept it, so mAA@30 = 20/30.
    let a = 10.5f64.to_radians();
    let gt2 = vec![pose_at(Vector3::zeros(), Quaternion::IDENTITY), pose_at(Vector3::x(), Quaternion::IDENTITY)];
    let est2 = vec![
        pose_at(Vector3::zeros(), Quaternion::IDENTITY),
        pose_at(Vector3::new(a.cos(), a.sin(), 0.0), Quaternion::from_axis_angle(&z, a).unwrap()),
    ];
    let hand_maa = (maa(&est2, &gt2, 30).unwrap() - 20.0 / 30.0).abs() < C5_TOLERANCE;

    // ATE of an exact copy is zero; a scaled, rotated, shifted copy too.
    let line = random_trajectory(&mut rng, 10);
    let copy = transform_world(&line, 3.0, &random_rotation(&mut rng), &Vector3::new(1.0, 2.0, 3.0));
    let hand_ate = ate_rmse(&copy, &line, Alignment::Sim3).unwrap() < C5_TOLERANCE
        && rms_spread(&line.iter().map(|p| p.center()).collect::<Vec<_>>()) > 0.0;

    let pass = oracle_diff <= C5_TOLERANCE && gauge <= C5_TOLERANCE && hand_rra && hand_maa && hand_ate;
    report(
        5,
        pass,
        &format!(
            "oracle diff {oracle_diff:.1e}, gauge diff {gauge:.1e} over {C5_GAUGE_TRIALS} transforms <= {C5_TOLERANCE:.0e}, hand cases rra/maa/ate: {hand_rra}/{hand_maa}/{hand_ate}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. End-to-end overfit and 7. downsampling trade-off

const C6_STEPS: usize = 10_000;
const C6_EVAL_ANCHORS: usize = 6;
const C6_EVAL_RATIO: f64 = 0.5;
const C6_EVAL_SEED: u64 = 7;
const C6_MIN_RRA15: f64 = 0.9;
const C6_MIN_RTA15: f64 = 0.8;
const C6_MAX_ATE_FRACTION: f64 = 0.05;
const C6_MAX_JOINT_GAP: f64 = 0.05;
const C6_MAX_SECONDS: f64 = 2.0 * 3600.0;
const C7_RATIOS: [f64; 4] = [0.1, 0.2, 0.5, 1.0];
const C7_MAX_INVERSIONS: usize = 1;
const C7_TIMING_REPEATS: usize = 3;
const C7_MIN_TOKEN_R2: f64 = 0.99;

/// Toy network on four orbit scenes. Every fourth frame of each scene is
/// held out; batches are small so two 10k-step runs fit the time budget.
fn c6_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        scene_frames: 144,
        frames_min: 4,
        frames_max: 8,
        anchors_min: 2,
        anchors_max: 4,
        steps: C6_STEPS,
        lr_peak: 6e-4,
        lr_warmup: 200,
        lr_final: 1.2e-5,
        log_every: 500,
        mode,
        ..TrainConfig::default()
    }
}

struct Trained {
    masked: Trainer,
    joint: Trainer,
    seconds: f64,
}

fn trained() -> &'static Trained {
    static MODELS: OnceLock<Trained> = OnceLock::new();
    MODELS.get_or_init(|| {
        let start = Instant::now();
        let mut masked = Trainer::new(c6_config(TrainMode::Masked)).unwrap();
        masked.run(|_, _| Ok(())).unwrap();
        // Same scenes, seed and schedule; only the attention pattern differs.
        let mut joint = Trainer::with_family(c6_config(TrainMode::Joint), masked.family.clone()).unwrap();
        joint.run(|_, _| Ok(())).unwrap();
        Trained { masked, joint, seconds: start.elapsed().as_secs_f64() }
    })
}

fn held_out(t: &Trainer, ratio: f64, mode: TrainMode) -> HeldOutEval {
    evaluate_held_out(&t.network, &t.family, &t.config, C6_EVAL_ANCHORS, ratio, C6_EVAL_SEED, mode).unwrap()
}

#[test]
fn criterion_6_end_to_end_overfit() {
    let models = trained();
    let masked = held_out(&models.masked, C6_EVAL_RATIO, TrainMode::Masked);
    let joint = held_out(&models.joint, 1.0, TrainMode::Joint);
    let (rra, rta, ate) = (masked.rra(15), masked.rta(15), masked.ate_fraction());
    let gap = joint.rra(15) - rra;
    let pass = rra >= C6_MIN_RRA15
        && rta >= C6_MIN_RTA15
        && ate <= C6_MAX_ATE_FRACTION
        && gap <= C6_MAX_JOINT_GAP
        && models.seconds <= C6_MAX_SECONDS;
    report(
        6,
        pass,
        &format!(
            "held-out RRA@15 {rra:.3} (>= {C6_MIN_RRA15}), RTA@15 {rta:.3} (>= {C6_MIN_RTA15}), ATE {:.2}% of extent (<= {:.0}%), joint RRA@15 {:.3} gap {gap:.3} (<= {C6_MAX_JOINT_GAP}), {C6_STEPS} steps x2 in {:.0} s",
            100.0 * ate,
            100.0 * C6_MAX_ATE_FRACTION,
            joint.rra(15),
            models.seconds
        ),
    );
    assert!(pass);
}

/// Least-squares slope and coefficient of determination of `y` against `x`.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 })
}

#[test]
fn criterion_7_downsampling_trade_off() {
    let models = trained();
    let mut errors = Vec::new();
    let mut tokens = Vec::new();
    let mut seconds = Vec::new();
    for &r in &C7_RATIOS {
        let mut evals: Vec<HeldOutEval> = (0..C7_TIMING_REPEATS).map(|_| held_out(&models.masked, r, TrainMode::Masked)).collect();
        let first = evals.remove(0);
        errors.push(first.mean_pair_error());
        tokens.push(first.representation_tokens());
        seconds.push(evals.iter().chain([&first]).map(HeldOutEval::localize_seconds).fold(f64::INFINITY, f64::min));
    }
    let inversions = errors.windows(2).filter(|w| w[1] > w[0]).count();
    let (token_slope, token_r2) = linear_fit(&C7_RATIOS, &tokens);
    let (time_slope, _) = linear_fit(&C7_RATIOS, &seconds);
    let pass = inversions <= C7_MAX_INVERSIONS && token_slope > 0.0 && token_r2 >= C7_MIN_TOKEN_R2 && time_slope > 0.0;
    let fmt = |v: &[f64], p: usize| v.iter().map(|x| format!("{x:.p$}")).collect::<Vec<_>>().join("/");
    report(
        7,
        pass,
        &format!(
            "r {}: pair error {} deg ({inversions} inversions <= {C7_MAX_INVERSIONS}), tokens {} (R^2 {token_r2:.4} >= {C7_MIN_TOKEN_R2}), localize s {} (slope {time_slope:.3} > 0)",
            fmt(&C7_RATIOS, 1),
            fmt(&errors, 2),
            fmt(&tokens, 0),
            fmt(&seconds, 3)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 8. Persistence

const C8_TOLERANCE: f64 = 1e-6;

#[test]
fn criterion_8_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = NetworkConfig::default();
    let net = Network::<f32>::init(cfg, 8).unwrap();

    let mut ckpt = Vec::new();
    write_checkpoint(&mut ckpt, &net).unwrap();
    let loaded = read_checkpoint(ckpt.as_slice()).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&mut again, &loaded).unwrap();
    let checkpoint_exact = loaded == net && again == ckpt;

    let scene = generate_scene(&SceneConfig { frames: 10, seed: 8, ..SceneConfig::default() }).unwrap();
    let scene_path = dir.path().join("scene.txt");
    write_scene(std::fs::File::create(&scene_path).unwrap(), &scene).unwrap();
    let ckpt_path = dir.path().join("net.bin");
    std::fs::write(&ckpt_path, &ckpt).unwrap();
    let opts = ReconstructOptions { anchors: Some(4), ratio: Some(0.3), batch_size: 3, seed: 8, ..Default::default() };

    let images: Vec<Image> = scene.trajectory.iter().map(|p| render_frame(&scene, p, cfg.resolution()).0).collect();
    let ids: Vec<String> = (0..images.len()).map(|i| i.to_string()).collect();
    let memory = reconstruct_images(&net, ids, &images, &opts).unwrap();

    let mut rep_bytes = Vec::new();
    write_representation(&mut rep_bytes, &memory.representation).unwrap();
    let rep = read_representation(rep_bytes.as_slice()).unwrap();
    let mut rep_again = Vec::new();
    write_representation(&mut rep_again, &rep).unwrap();
    let representation_exact = rep == memory.representation && rep_again == rep_bytes;

    // Everything re-read from disk: checkpoint, representation, and the
    // trajectory written by the reconstruct command.
    let out = dir.path().join("out");
    reconstruct(&ReconstructInput::Scene(scene_path), &ckpt_path, &opts, &out).unwrap();
    let disk_net = read_checkpoint(std::fs::File::open(&ckpt_path).unwrap()).unwrap();
    let disk_rep = read_representation(std::fs::File::open(out.join("representation.bin")).unwrap()).unwrap();
    let all: Vec<&Image> = images.iter().collect();
    let from_file = disk_net.localize_batch(&all, &disk_rep, 5).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in from_file.iter().zip(&memory.results) {
        worst = worst.max(result_diff(a, b));
    }
    let traj = recon_core::pipeline::read_trajectory(&out.join("trajectory.tum")).unwrap();
    for (p, r) in traj.poses().iter().zip(&memory.results) {
        let (rot, t) = pose_distance(p, &r.pose);
        worst = worst.max(rot).max(t);
    }

    let pass = checkpoint_exact && representation_exact && worst <= C8_TOLERANCE;
    report(
        8,
        pass,
        &format!("checkpoint bit-exact: {checkpoint_exact}, representation bit-exact: {representation_exact}, file vs memory {worst:.1e} <= {C8_TOLERANCE:.0e}"),
    );
    assert!(pass);
}
