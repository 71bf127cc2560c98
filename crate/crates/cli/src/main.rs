//! `recon`: generate synthetic scenes, train, reconstruct and evaluate.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recon_core::evalkit::{Alignment, DEFAULT_THRESHOLDS};
use recon_core::geometry::Resolution;
use recon_core::pipeline::{self, PipelineError, ReconstructInput, ReconstructOptions, TrainConfig, TrainMode};
use recon_core::synth::{SceneConfig, TrajectoryKind};

#[derive(Parser)]
#[command(name = "recon", version, about = "Anchor-conditioned feed-forward reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene file.
    MakeScene(MakeSceneArgs),
    /// Train a network on a synthetic scene family.
    Train(TrainArgs),
    /// Estimate poses and dense maps for a scene file or an image directory.
    Reconstruct(ReconstructArgs),
    /// Compare an estimated trajectory with ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct MakeSceneArgs {
    /// TOML file with scene settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    extent: Option<f64>,
    #[arg(long, value_parser = parse_trajectory)]
    trajectory: Option<TrajectoryKind>,
    #[arg(long)]
    frames: Option<usize>,
    /// Horizontal field of view, radians.
    #[arg(long)]
    fov_x: Option<f64>,
    /// Vertical field of view, radians.
    #[arg(long)]
    fov_y: Option<f64>,
    /// Output scene file.
    #[arg(long)]
    out: PathBuf,
    /// Also write ground-truth trajectory, PPM renders and dense grids here.
    #[arg(long)]
    export: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    /// Output directory for checkpoints, log and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Scene file to render and reconstruct.
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    scene: Option<PathBuf>,
    /// Directory of PPM images, processed in file-name order.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Anchor count N; defaults to the checkpoint's setting.
    #[arg(long)]
    anchors: Option<usize>,
    /// Fraction r of patch tokens kept per anchor and layer.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame index to use as the first anchor.
    #[arg(long)]
    first_anchor: Option<usize>,
    /// Post-refinement of the feed-forward poses (not implemented).
    #[arg(long)]
    refine: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated trajectory (TUM).
    #[arg(long)]
    estimate: PathBuf,
    /// Ground-truth trajectory (TUM).
    #[arg(long)]
    ground_truth: PathBuf,
    /// Angular thresholds in whole degrees.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS)]
    thresholds: Vec<f64>,
    #[arg(long, default_value = "sim3", value_parser = parse_alignment)]
    alignment: Alignment,
    #[arg(long)]
    out: PathBuf,
}

fn parse_trajectory(s: &str) -> Result<TrajectoryKind, String> {
    s.parse().map_err(|e: recon_core::synth::SynthError| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    match s {
        "masked" => Ok(TrainMode::Masked),
        "joint" => Ok(TrainMode::Joint),
        other => Err(format!("unknown mode {other:?} (masked or joint)")),
    }
}

fn parse_alignment(s: &str) -> Result<Alignment, String> {
    s.parse().map_err(|e: recon_core::evalkit::EvalError| e.to_string())
}

fn make_scene(a: MakeSceneArgs) -> Result<(), PipelineError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
            toml::from_str::<SceneConfig>(&text).map_err(|e| PipelineError::Config(e.to_string()))?
        }
        None => SceneConfig::default(),
    };
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.points = a.points.unwrap_or(cfg.points);
    cfg.extent = a.extent.unwrap_or(cfg.extent);
    cfg.trajectory = a.trajectory.unwrap_or(cfg.trajectory);
    cfg.frames = a.frames.unwrap_or(cfg.frames);
    cfg.fov = [a.fov_x.unwrap_or(cfg.fov[0]), a.fov_y.unwrap_or(cfg.fov[1])];
    let export = a.export.as_deref().map(|d| (d, Resolution::new(a.width, a.height)));
    pipeline::make_scene(&cfg, &a.out, export)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), PipelineError> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.mode = a.mode.unwrap_or(cfg.mode);
    let (_, history) = pipeline::train(&cfg, &a.out)?;
    if let Some(last) = history.last() {
        println!("step {} loss {:.5}", last.step, last.loss.total);
    }
    println!("wrote {}", a.out.join("checkpoint.bin").display());
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> Result<(), PipelineError> {
    let input = match (a.scene, a.images) {
        (Some(s), _) => ReconstructInput::Scene(s),
        (None, Some(d)) => ReconstructInput::Images(d),
        (None, None) => unreachable!("clap requires one input"),
    };
    let opts = ReconstructOptions {
        anchors: a.anchors,
        ratio: a.ratio,
        batch_size: a.batch_size,
        seed: a.seed,
        first_anchor: a.first_anchor,
        refine: a.refine,
    };
    // Warnings about the anchor count are logged by the pipeline.
    let rec = pipeline::reconstruct(&input, &a.checkpoint, &opts, &a.out)?;
    println!(
        "localized {} frames against {} anchors; wrote {}",
        rec.results.len(),
        rec.anchors.len(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), PipelineError> {
    let report = pipeline::eval(&a.estimate, &a.ground_truth, &a.thresholds, a.alignment, &a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = pipeline::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::MakeScene(a) => make_scene(a),
        Command::Train(a) => train(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
