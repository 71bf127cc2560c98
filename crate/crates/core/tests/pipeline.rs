mod common;

use std::path::Path;

use recon_core::backbone::{read_checkpoint, write_checkpoint, Network};
use recon_core::evalkit::{evaluate, Alignment, Trajectory, DEFAULT_THRESHOLDS};
use recon_core::geometry::Resolution;
use recon_core::pipeline::{
    eval, load_checkpoint, make_scene, manifest_path_for, read_trajectory, reconstruct, reconstruct_images,
    save_checkpoint, train, PipelineError, ReconstructInput, ReconstructOptions, RunManifest, TrainConfig, Trainer,
};
use recon_core::synth::{generate_scene, render_all, SceneConfig};

/// Small shape that trains in seconds.
fn small_config() -> TrainConfig {
    TrainConfig {
        width: 32,
        height: 32,
        patch: 8,
        channels: 32,
        layers: 2,
        heads: 2,
        anchors: 3,
        ratio: 0.5,
        scenes: 1,
        scene_points: 8000,
        scene_frames: 24,
        holdout_every: 0,
        frames_min: 4,
        frames_max: 8,
        anchors_min: 2,
        anchors_max: 3,
        steps: 20,
        log_every: 0,
        ..TrainConfig::default()
    }
}

fn read_manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn zero_steps_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 0, ..small_config() };
    let (net, history) = train(&cfg, dir.path()).unwrap();
    assert!(history.is_empty());
    let init = Network::<f32>::init(cfg.network(), cfg.seed).unwrap();
    assert_eq!(net, init);
    assert_eq!(load_checkpoint(&dir.path().join("checkpoint.bin")).unwrap(), init);
    let manifest = read_manifest(&dir.path().join("manifest.json"));
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seed, Some(cfg.seed));
}

#[test]
fn training_is_bit_reproducible() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&cfg, a.path()).unwrap();
    train(&cfg, b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join("checkpoint.bin")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_ne!(read(a.path()), {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &Network::<f32>::init(cfg.network(), cfg.seed).unwrap()).unwrap();
        buf
    });
    let log = std::fs::read_to_string(a.path().join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), cfg.steps + 1);
}

#[test]
fn intermediate_checkpoints_follow_the_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { steps: 6, checkpoint_every: 2, ..small_config() };
    train(&cfg, dir.path()).unwrap();
    for step in [2, 4] {
        assert!(dir.path().join(format!("checkpoint-{step:06}.bin")).exists());
    }
    assert!(!dir.path().join("checkpoint-000006.bin").exists());
}

#[test]
fn one_scene_overfits_by_ten_times() {
    let cfg = TrainConfig { steps: 2000, ..small_config() };
    let mut trainer = Trainer::new(cfg).unwrap();
    let history = trainer.run(|_, _| Ok(())).unwrap();
    let first = mean(history[..50].iter().map(|r| r.loss.total));
    let last = mean(history[history.len() - 50..].iter().map(|r| r.loss.total));
    assert!(first > 0.0);
    assert!(last <= first / 10.0, "loss {first:.4} -> {last:.4}");
    // The confidence terms can drive the total below zero; the pose term cannot.
    let cam_first = mean(history[..50].iter().map(|r| r.loss.camera));
    let cam_last = mean(history[history.len() - 50..].iter().map(|r| r.loss.camera));
    assert!(cam_last <= cam_first / 10.0, "camera {cam_first:.4} -> {cam_last:.4}");
}

#[test]
fn invalid_training_configs_are_rejected() {
    for cfg in [
        TrainConfig { anchors_min: 4, ..small_config() },
        TrainConfig { frames_min: 1, ..small_config() },
        TrainConfig { ratio_min: 0.05, ..small_config() },
        TrainConfig { lr_final: 1.0, ..small_config() },
    ] {
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))), "{cfg:?}");
    }
    assert!(TrainConfig::from_toml("steps = 3\nbogus = 1\n").is_err());
    let parsed = TrainConfig::from_toml("steps = 3\nmode = \"joint\"\n").unwrap();
    assert_eq!(parsed.steps, 3);
    assert_eq!(TrainConfig::from_toml(&parsed.to_toml()).unwrap(), parsed);
}

struct Fixture {
    dir: tempfile::TempDir,
    checkpoint: std::path::PathBuf,
    scene: std::path::PathBuf,
}

fn fixture(frames: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let checkpoint = dir.path().join("net.bin");
    save_checkpoint(&checkpoint, &Network::init(cfg.network(), 3).unwrap()).unwrap();
    let scene = dir.path().join("scene.txt");
    make_scene(&SceneConfig { points: 4000, frames, seed: 3, ..SceneConfig::default() }, &scene, None).unwrap();
    Fixture { dir, checkpoint, scene }
}

#[test]
fn batch_size_does_not_change_the_reconstruction() {
    let f = fixture(12);
    let input = ReconstructInput::Scene(f.scene.clone());
    let opts = |batch_size| ReconstructOptions { anchors: Some(4), batch_size, seed: 1, ..Default::default() };
    let out1 = f.dir.path().join("b1");
    let out16 = f.dir.path().join("b16");
    let a = reconstruct(&input, &f.checkpoint, &opts(1), &out1).unwrap();
    let b = reconstruct(&input, &f.checkpoint, &opts(16), &out16).unwrap();
    assert_eq!((a.results.len(), b.results.len()), (12, 12));
    assert_eq!(a.anchors, [0, 4, 7, 11]);
    let (ta, tb) = (read_trajectory(&out1.join("trajectory.tum")).unwrap(), read_trajectory(&out16.join("trajectory.tum")).unwrap());
    assert_eq!(ta.len(), 12);
    for (p, q) in ta.poses().iter().zip(tb.poses()) {
        assert!((p.center() - q.center()).norm() < 1e-5);
        assert!((p.rotation.dot(&q.rotation).abs() - 1.0).abs() < 1e-5);
    }
    // Same batch size twice: identical bytes.
    let again = f.dir.path().join("b16-again");
    reconstruct(&input, &f.checkpoint, &opts(16), &again).unwrap();
    for file in ["trajectory.tum", "representation.bin", "dense/5.grid"] {
        assert_eq!(std::fs::read(out16.join(file)).unwrap(), std::fs::read(again.join(file)).unwrap(), "{file}");
    }
    let manifest = read_manifest(&out16.join("manifest.json"));
    assert_eq!(manifest.command, "reconstruct");
    assert_eq!(manifest.inputs.len(), 2);
    assert!(manifest.outputs.iter().any(|o| o.ends_with("trajectory.tum")));
    assert!(manifest.timings.contains_key("total"));
}

#[test]
fn every_frame_can_be_an_anchor() {
    let f = fixture(5);
    let net = load_checkpoint(&f.checkpoint).unwrap();
    let scene = generate_scene(&SceneConfig { points: 4000, frames: 5, seed: 3, ..SceneConfig::default() }).unwrap();
    let images: Vec<_> = render_all(&scene, Resolution::new(32, 32)).into_iter().map(|(i, _)| i).collect();
    let ids: Vec<String> = (0..5).map(|i| i.to_string()).collect();
    let rec = reconstruct_images(&net, ids.clone(), &images, &ReconstructOptions { anchors: Some(5), ..Default::default() }).unwrap();
    assert_eq!(rec.anchors, [0, 1, 2, 3, 4]);
    assert_eq!(rec.results.len(), 5);
    // Too many anchors are clamped, with a warning.
    let rec = reconstruct_images(&net, ids.clone(), &images, &ReconstructOptions { anchors: Some(9), ..Default::default() }).unwrap();
    assert_eq!(rec.anchors.len(), 5);
    assert!(rec.warnings.iter().any(|w| w.contains("clamped")));
    assert!(rec.warnings.iter().any(|w| w.contains("50-100")));

    let first = ReconstructOptions { anchors: Some(3), first_anchor: Some(3), ..Default::default() };
    assert_eq!(reconstruct_images(&net, ids.clone(), &images, &first).unwrap().anchors[0], 3);
    let refine = ReconstructOptions { refine: true, ..Default::default() };
    assert!(matches!(reconstruct_images(&net, ids, &images, &refine), Err(PipelineError::Input(_))));
}

#[test]
fn eval_command_matches_the_library() {
    let f = fixture(10);
    let export = f.dir.path().join("export");
    let manifest = make_scene(
        &SceneConfig { points: 4000, frames: 10, seed: 3, ..SceneConfig::default() },
        &f.scene,
        Some((&export, Resolution::new(32, 32))),
    )
    .unwrap();
    assert!(manifest_path_for(&f.scene).exists());
    assert_eq!(manifest.outputs.len(), 2 + 2 * 10);
    let gt = export.join("groundtruth.tum");

    let out = f.dir.path().join("rec");
    reconstruct(&ReconstructInput::Images(export.clone()), &f.checkpoint, &ReconstructOptions { anchors: Some(3), ..Default::default() }, &out).unwrap();
    let est = out.join("trajectory.tum");
    // Image ids are the file stems, so match them to the numeric ids of the ground truth.
    let est_t = read_trajectory(&est).unwrap();
    let renamed = Trajectory::new(est_t.ids().iter().map(|s| s.trim_start_matches('0').to_string()).map(|s| if s.is_empty() { "0".into() } else { s }).collect(), est_t.poses().to_vec()).unwrap();
    recon_core::pipeline::write_trajectory(&est, &renamed.to_tum()).unwrap();

    let eval_dir = f.dir.path().join("eval");
    let report = eval(&est, &gt, &DEFAULT_THRESHOLDS, Alignment::Sim3, &eval_dir).unwrap();
    let direct = evaluate(&read_trajectory(&est).unwrap(), &read_trajectory(&gt).unwrap(), &DEFAULT_THRESHOLDS, Alignment::Sim3).unwrap();
    assert_eq!(report, direct);
    let text = std::fs::read_to_string(eval_dir.join("metrics.txt")).unwrap();
    assert_eq!(text, direct.to_text());
    assert!(eval_dir.join("metrics.json").exists() && eval_dir.join("manifest.json").exists());

    // Ground truth against itself, once more with a comment header.
    let perfect = eval(&gt, &gt, &DEFAULT_THRESHOLDS, Alignment::Sim3, &f.dir.path().join("self")).unwrap();
    assert_eq!((perfect.rra_at[&5], perfect.rta_at[&5]), (1.0, 1.0));
    assert!(perfect.ate_rmse < 1e-9);
    let commented = f.dir.path().join("commented.tum");
    std::fs::write(&commented, format!("# id tx ty tz qx qy qz qw\n{}", std::fs::read_to_string(&gt).unwrap())).unwrap();
    assert_eq!(read_trajectory(&commented).unwrap().poses(), read_trajectory(&gt).unwrap().poses());

    // Missing frames are named in the error.
    let short = f.dir.path().join("short.tum");
    let gt_t = read_trajectory(&gt).unwrap();
    recon_core::pipeline::write_trajectory(&short, &gt_t.subset(&gt_t.ids()[..8]).unwrap().to_tum()).unwrap();
    let err = eval(&short, &gt, &DEFAULT_THRESHOLDS, Alignment::Sim3, &f.dir.path().join("bad")).unwrap_err();
    assert!(err.to_string().contains('8') && err.to_string().contains('9'), "{err}");
}

#[test]
fn checkpoint_files_round_trip() {
    let f = fixture(4);
    let bytes = std::fs::read(&f.checkpoint).unwrap();
    let net = read_checkpoint(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&mut again, &net).unwrap();
    assert_eq!(again, bytes);
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let missing = f.dir.path().join("nope.bin");
    assert!(matches!(load_checkpoint(&missing), Err(PipelineError::Io { .. })));
}
