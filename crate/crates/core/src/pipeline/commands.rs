use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector2;

use super::manifest::RunManifest;
use super::ppm::decode_ppm;
use super::train::{StepRecord, Trainer};
use super::{PipelineError, TrainConfig};
use crate::backbone::{
    read_checkpoint, write_checkpoint, write_representation, FrameResult, Image, Network, SceneRepresentation,
};
use crate::evalkit::{evaluate, Alignment, MetricsReport, Trajectory};
use crate::geometry::{read_tum, write_tum, TumEntry};
use crate::synth::{
    dense_to_grid, generate_scene, read_scene, render_all, split_anchor_query, write_grid, write_scene, SceneConfig,
    SyntheticScene,
};

/// Anchor counts suggested for large collections.
pub const RECOMMENDED_ANCHORS: (usize, usize) = (50, 100);
/// Fewest anchors used when the collection allows it.
pub const MIN_ANCHORS: usize = 2;
/// Field of view given to poses read from trajectory files.
const TRAJECTORY_FOV: f64 = 1.0;

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path).map(BufWriter::new).map_err(|e| PipelineError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(|e| PipelineError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(path).map_err(|e| PipelineError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network<f32>, PipelineError> {
    Ok(read_checkpoint(open(path)?)?)
}

pub fn save_checkpoint(path: &Path, net: &Network<f32>) -> Result<(), PipelineError> {
    Ok(write_checkpoint(create(path)?, net)?)
}

pub fn load_scene(path: &Path) -> Result<SyntheticScene, PipelineError> {
    Ok(read_scene(open(path)?)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, PipelineError> {
    let entries = read_tum(open(path)?, Vector2::repeat(TRAJECTORY_FOV))?;
    Ok(Trajectory::from_tum(entries)?)
}

pub fn write_trajectory(path: &Path, entries: &[TumEntry]) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    write_tum(&mut w, entries)?;
    std::io::Write::flush(&mut w).map_err(|e| PipelineError::io(path, e))
}

/// Generates a scene file. With `export_dir`, also writes the ground-truth
/// trajectory, the rendered images and dense grids at `resolution`.
pub fn make_scene(
    cfg: &SceneConfig,
    out: &Path,
    export: Option<(&Path, crate::geometry::Resolution)>,
) -> Result<RunManifest, PipelineError> {
    let start = Instant::now();
    let mut manifest = RunManifest::new(
        "make-scene",
        serde_json::to_value(cfg).expect("config serializes"),
        Some(cfg.seed),
    );
    let scene = generate_scene(cfg)?;
    {
        let mut w = create(out)?;
        write_scene(&mut w, &scene)?;
    }
    manifest.add_output(out);
    if let Some((dir, res)) = export {
        create_dir(dir)?;
        let gt = dir.join("groundtruth.tum");
        write_trajectory(&gt, &Trajectory::from_poses(scene.trajectory.clone()).to_tum())?;
        manifest.add_output(&gt);
        for (i, (image, dense)) in render_all(&scene, res).iter().enumerate() {
            let img = dir.join(format!("{i:04}.ppm"));
            super::ppm::encode_ppm(create(&img)?, image).map_err(|e| PipelineError::io(&img, e))?;
            let grid = dir.join(format!("{i:04}.grid"));
            write_grid(create(&grid)?, &dense_to_grid(dense))?;
            manifest.add_output(&img);
            manifest.add_output(&grid);
        }
    }
    manifest.time("total", start.elapsed().as_secs_f64());
    let path = manifest_path_for(out);
    manifest.write(&path)?;
    Ok(manifest)
}

/// Manifest location for commands that write a single file.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Trains from `cfg` and writes `checkpoint.bin` (plus intermediate
/// checkpoints at the configured cadence) and a per-step log into `out_dir`.
pub fn train(cfg: &TrainConfig, out_dir: &Path) -> Result<(Network<f32>, Vec<StepRecord>), PipelineError> {
    cfg.validate()?;
    create_dir(out_dir)?;
    let start = Instant::now();
    let mut manifest = RunManifest::new(
        "train",
        serde_json::to_value(cfg).expect("config serializes"),
        Some(cfg.seed),
    );
    let mut trainer = Trainer::new(cfg.clone())?;
    manifest.time("setup", start.elapsed().as_secs_f64());
    let log_path = out_dir.join("train_log.tsv");
    let mut log = create(&log_path)?;
    let io = |e| PipelineError::io(&log_path, e);
    use std::io::Write as _;
    writeln!(log, "step\tbatch_seed\tframes\tanchors\tratio\tlr\tgrad_norm\ttotal\tcamera\tdepth\tscm").map_err(io)?;
    let mut written = Vec::new();
    let train_start = Instant::now();
    let history = trainer.run(|t, r| {
        writeln!(
            log,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.step,
            r.batch_seed,
            r.frames,
            r.anchors,
            r.ratio,
            r.learning_rate,
            r.grad_norm,
            r.loss.total,
            r.loss.camera,
            r.loss.depth,
            r.loss.scm
        )
        .map_err(io)?;
        let every = t.config.checkpoint_every;
        if every > 0 && (r.step + 1) % every == 0 && !t.is_done() {
            let p = out_dir.join(format!("checkpoint-{:06}.bin", r.step + 1));
            save_checkpoint(&p, &t.network)?;
            written.push(p);
        }
        Ok(())
    })?;
    log.flush().map_err(io)?;
    manifest.time("train", train_start.elapsed().as_secs_f64());
    let ckpt = out_dir.join("checkpoint.bin");
    save_checkpoint(&ckpt, &trainer.network)?;
    for p in written.iter().chain([&log_path, &ckpt]) {
        manifest.add_output(p);
    }
    manifest.time("total", start.elapsed().as_secs_f64());
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok((trainer.network, history))
}

/// Frames to reconstruct: a scene file (rendered at the network resolution)
/// or a directory of PPM images.
#[derive(Clone, Debug, PartialEq)]
pub enum ReconstructInput {
    Scene(PathBuf),
    Images(PathBuf),
}

impl ReconstructInput {
    pub fn path(&self) -> &Path {
        match self {
            ReconstructInput::Scene(p) | ReconstructInput::Images(p) => p,
        }
    }

    /// Frame ids and images.
    pub fn load(&self, net: &Network<f32>) -> Result<(Vec<String>, Vec<Image>), PipelineError> {
        match self {
            ReconstructInput::Scene(path) => {
                let scene = load_scene(path)?;
                let images: Vec<Image> = render_all(&scene, net.config().resolution())
                    .into_iter()
                    .map(|(img, _)| img)
                    .collect();
                Ok(((0..images.len()).map(|i| i.to_string()).collect(), images))
            }
            ReconstructInput::Images(dir) => {
                let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(|e| PipelineError::io(dir, e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
                    .collect();
                files.sort();
                let mut ids = Vec::with_capacity(files.len());
                let mut images = Vec::with_capacity(files.len());
                let cfg = net.config();
                for f in files {
                    let img = decode_ppm(&std::fs::read(&f).map_err(|e| PipelineError::io(&f, e))?)?;
                    if img.dim() != (cfg.height, cfg.width, 3) {
                        return Err(PipelineError::Input(format!(
                            "{} is {}x{}, the checkpoint expects {}x{}",
                            f.display(),
                            img.dim().1,
                            img.dim().0,
                            cfg.width,
                            cfg.height
                        )));
                    }
                    let id = f.file_stem().unwrap_or_default().to_string_lossy().replace(char::is_whitespace, "_");
                    ids.push(id);
                    images.push(img);
                }
                Ok((ids, images))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructOptions {
    /// Requested anchor count; the checkpoint's default when `None`.
    pub anchors: Option<usize>,
    /// Downsampling ratio; the checkpoint's default when `None`.
    pub ratio: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
    /// Frame index forced into the first anchor slot.
    pub first_anchor: Option<usize>,
    /// Post-refinement of the feed-forward poses. Not implemented.
    pub refine: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            anchors: None,
            ratio: None,
            batch_size: 16,
            seed: 0,
            first_anchor: None,
            refine: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub ids: Vec<String>,
    pub anchors: Vec<usize>,
    pub representation: SceneRepresentation<f32>,
    pub results: Vec<FrameResult>,
    pub warnings: Vec<String>,
}

impl Reconstruction {
    pub fn trajectory(&self) -> Vec<TumEntry> {
        self.ids
            .iter()
            .zip(&self.results)
            .map(|(id, r)| TumEntry {
                id: id.clone(),
                pose: r.pose,
            })
            .collect()
    }
}

/// Anchor count actually used for `frames` frames, plus any warnings.
pub fn resolve_anchor_count(requested: usize, frames: usize) -> (usize, Vec<String>) {
    let mut warnings = Vec::new();
    let n = requested.clamp(frames.min(MIN_ANCHORS), frames);
    if n != requested {
        warnings.push(format!("anchor count {requested} clamped to {n} for {frames} frames"));
    }
    if frames < RECOMMENDED_ANCHORS.0 {
        warnings.push(format!(
            "only {frames} frames: the recommended {}-{} anchors are not available, using {n}",
            RECOMMENDED_ANCHORS.0, RECOMMENDED_ANCHORS.1
        ));
    }
    (n, warnings)
}

/// Anchor frame indices: evenly strided, optionally with `first` moved to
/// the front (replacing the first strided pick).
pub fn choose_anchors(frames: usize, n: usize, first: Option<usize>) -> Result<Vec<usize>, PipelineError> {
    let (mut anchors, _) = split_anchor_query(frames, n)?;
    if let Some(f) = first {
        if f >= frames {
            return Err(PipelineError::Input(format!("first anchor {f} out of range for {frames} frames")));
        }
        anchors.retain(|&a| a != f);
        if anchors.len() == n {
            anchors.remove(0);
        }
        anchors.insert(0, f);
    }
    Ok(anchors)
}

/// Builds the representation from the anchors, then localizes every frame
/// (anchors included) against it.
pub fn reconstruct_images(
    net: &Network<f32>,
    ids: Vec<String>,
    images: &[Image],
    opts: &ReconstructOptions,
) -> Result<Reconstruction, PipelineError> {
    if opts.refine {
        return Err(PipelineError::Input("post-refinement is not implemented".into()));
    }
    if images.is_empty() {
        return Err(PipelineError::Input("no input frames".into()));
    }
    if opts.batch_size == 0 {
        return Err(PipelineError::Input("batch size must be at least 1".into()));
    }
    let m = images.len();
    let (n, warnings) = resolve_anchor_count(opts.anchors.unwrap_or(net.config().anchors), m);
    let anchors = choose_anchors(m, n, opts.first_anchor)?;
    let ratio = opts.ratio.unwrap_or(net.config().ratio);
    let anchor_images: Vec<&Image> = anchors.iter().map(|&a| &images[a]).collect();
    let (representation, _) = net.regress_scene(&anchor_images, ratio, opts.seed)?;
    let all: Vec<&Image> = images.iter().collect();
    let results = net.localize_batch(&all, &representation, opts.batch_size)?;
    Ok(Reconstruction {
        ids,
        anchors,
        representation,
        results,
        warnings,
    })
}

/// Full reconstruct command: writes `trajectory.tum`, `representation.bin`,
/// `dense/<id>.grid` and `manifest.json` into `out_dir`.
pub fn reconstruct(
    input: &ReconstructInput,
    checkpoint: &Path,
    opts: &ReconstructOptions,
    out_dir: &Path,
) -> Result<Reconstruction, PipelineError> {
    let start = Instant::now();
    let mut manifest = RunManifest::new(
        "reconstruct",
        serde_json::json!({
            "anchors": opts.anchors,
            "ratio": opts.ratio,
            "batch_size": opts.batch_size,
            "first_anchor": opts.first_anchor,
        }),
        Some(opts.seed),
    );
    if opts.refine {
        return Err(PipelineError::Input("post-refinement is not implemented".into()));
    }
    manifest.add_input(checkpoint)?;
    manifest.add_input(input.path())?;
    let net = load_checkpoint(checkpoint)?;
    let (ids, images) = input.load(&net)?;
    manifest.time("load", start.elapsed().as_secs_f64());
    let t = Instant::now();
    let rec = reconstruct_images(&net, ids, &images, opts)?;
    manifest.time("reconstruct", t.elapsed().as_secs_f64());
    for w in &rec.warnings {
        log::warn!("{w}");
    }

    create_dir(out_dir)?;
    let traj = out_dir.join("trajectory.tum");
    write_trajectory(&traj, &rec.trajectory())?;
    let rep = out_dir.join("representation.bin");
    write_representation(create(&rep)?, &rec.representation)?;
    let dense_dir = out_dir.join("dense");
    create_dir(&dense_dir)?;
    for (id, r) in rec.ids.iter().zip(&rec.results) {
        let p = dense_dir.join(format!("{id}.grid"));
        write_grid(create(&p)?, &dense_to_grid(&r.dense))?;
        manifest.add_output(&p);
    }
    manifest.add_output(&traj);
    manifest.add_output(&rep);
    manifest.time("total", start.elapsed().as_secs_f64());
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(rec)
}

/// Evaluates an estimated trajectory file against a ground-truth one and
/// writes `metrics.txt`, `metrics.json` and `manifest.json` into `out_dir`.
pub fn eval(
    estimate: &Path,
    ground_truth: &Path,
    thresholds: &[f64],
    alignment: Alignment,
    out_dir: &Path,
) -> Result<MetricsReport, PipelineError> {
    let start = Instant::now();
    let mut manifest = RunManifest::new(
        "eval",
        serde_json::json!({ "thresholds": thresholds, "alignment": alignment }),
        None,
    );
    manifest.add_input(estimate)?;
    manifest.add_input(ground_truth)?;
    let est = read_trajectory(estimate)?;
    let gt = read_trajectory(ground_truth)?;
    let report = evaluate(&est, &gt, thresholds, alignment)?;
    create_dir(out_dir)?;
    let text = out_dir.join("metrics.txt");
    let json = out_dir.join("metrics.json");
    std::fs::write(&text, report.to_text()).map_err(|e| PipelineError::io(&text, e))?;
    std::fs::write(&json, report.to_json() + "\n").map_err(|e| PipelineError::io(&json, e))?;
    manifest.add_output(&text);
    manifest.add_output(&json);
    manifest.time("total", start.elapsed().as_secs_f64());
    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(report)
}
