//! `echopipe`: generate phantom datasets, train and verify the two-stage
//! segmentation + detection pipeline, and run it end to end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
//! Log level comes from the `ECHOPIPE_LOG` env var.

mod commands;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "echopipe", version, about = "Echocardiography LV segmentation and wall-motion classification pipeline")]
struct Cli {
    /// Base RNG seed for everything this run derives.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for window-parallel inference and training
    /// (results are identical at any thread count; 0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with manifest and splits.
    GenerateData(GenerateDataArgs),
    /// Train the 2D segmenter on a dataset's training split.
    TrainSeg(TrainSegArgs),
    /// 5-fold cross-validate the 3D detector and train a final model.
    TrainDet(TrainDetArgs),
    /// Segment one video: predict masks, crop to the bounding box.
    Segment(SegmentArgs),
    /// Classify one already-cropped video with a trained detector.
    Detect(DetectArgs),
    /// Full pipeline on one raw video: segment, crop, resize, classify.
    Pipeline(PipelineArgs),
    /// Run the full pipeline over a dataset split and report metrics.
    Eval(EvalArgs),
    /// Print the exact trainable-parameter count of a model.
    ParamCount(ParamCountArgs),
    /// Finite-difference gradient verification (64-bit mode).
    Gradcheck(GradcheckArgs),
    /// Enumerate segmenter-family configurations matching a parameter count.
    ArchSearch(ArchSearchArgs),
}

#[derive(Debug, Args)]
struct GenerateDataArgs {
    /// Output directory for ECHO files and manifest.json.
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 40)]
    videos: usize,
    /// Fraction of videos labelled MI.
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, default_value_t = 25)]
    frames: usize,
    #[arg(long, default_value_t = 25)]
    cycle_frames: usize,
    #[arg(long, default_value_t = 256)]
    frame_h_min: usize,
    #[arg(long, default_value_t = 288)]
    frame_h_max: usize,
    #[arg(long, default_value_t = 300)]
    frame_w_min: usize,
    #[arg(long, default_value_t = 340)]
    frame_w_max: usize,
    /// Peak fraction of radius lost at systole.
    #[arg(long, default_value_t = 0.35)]
    amplitude: f64,
    /// Motion retained inside the hypokinetic sector of MI phantoms.
    #[arg(long, default_value_t = 0.1)]
    reduction: f64,
    /// Hypokinetic sector width in radians.
    #[arg(long, default_value_t = std::f64::consts::PI)]
    sector_width: f64,
    #[arg(long, default_value_t = 6.0)]
    wall_thickness: f64,
    /// Speckle noise standard deviation.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    /// Blur the left wall (emulates degraded acquisitions).
    #[arg(long, default_value_t = false)]
    wall_blur: bool,
    /// Bright speckle inside the chamber.
    #[arg(long, default_value_t = false)]
    interior_speckle: bool,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Debug, Args)]
struct TrainSegArgs {
    #[arg(long)]
    manifest: std::path::PathBuf,
    /// Dataset directory; defaults to the manifest's directory.
    #[arg(long)]
    data: Option<std::path::PathBuf>,
    /// Output MDLW weight file.
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Evenly-spaced frames sampled per video (all frames if omitted).
    #[arg(long)]
    frames_per_video: Option<usize>,
    /// Encoder filter counts, e.g. 32,64,128.
    #[arg(long, default_value = "32,64,128", value_parser = parse_filters)]
    enc_filters: FilterTriple,
    /// Decoder filter counts, e.g. 64,32,16.
    #[arg(long, default_value = "64,32,16", value_parser = parse_filters)]
    dec_filters: FilterTriple,
    /// Optional JSON file for the loss/accuracy curves.
    #[arg(long)]
    curves: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
struct TrainDetArgs {
    #[arg(long)]
    manifest: std::path::PathBuf,
    #[arg(long)]
    data: Option<std::path::PathBuf>,
    /// Temporal window size.
    #[arg(long, default_value_t = 5)]
    w: usize,
    /// Detector input plane (rows x cols) every crop is resized to.
    #[arg(long, default_value = "236x183", value_parser = parse_plane)]
    input: Plane,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Directory for report.json / report.txt.
    #[arg(long)]
    report_dir: std::path::PathBuf,
    /// Optional MDLW output for a final model trained on all training folds.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    /// Input ECHO video.
    #[arg(long = "in")]
    input: std::path::PathBuf,
    /// Segmenter MDLW weights.
    #[arg(long)]
    weights: std::path::PathBuf,
    /// Cropped output video (ECHO).
    #[arg(long)]
    out: std::path::PathBuf,
    /// Optional JSON summary (bbox, fallback flag, timings).
    #[arg(long)]
    json: Option<std::path::PathBuf>,
    /// Directory for per-frame PGM debug overlays with the bbox burned in.
    #[arg(long)]
    overlay: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 150)]
    win: usize,
    #[arg(long, default_value_t = 75)]
    stride: usize,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Input ECHO video (already cropped to the LV).
    #[arg(long = "in")]
    input: std::path::PathBuf,
    /// Detector MDLW weights.
    #[arg(long)]
    weights: std::path::PathBuf,
    /// Verdict JSON output (stdout if omitted).
    #[arg(long)]
    json: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Input ECHO video.
    #[arg(long = "in")]
    input: std::path::PathBuf,
    /// Segmenter MDLW weights.
    #[arg(long)]
    seg: std::path::PathBuf,
    /// Detector MDLW weights.
    #[arg(long)]
    det: std::path::PathBuf,
    /// Verdict JSON output (stdout if omitted).
    #[arg(long)]
    json: Option<std::path::PathBuf>,
    /// Expected temporal window size; must match the detector weights.
    #[arg(long)]
    w: Option<usize>,
    #[arg(long, default_value_t = 150)]
    win: usize,
    #[arg(long, default_value_t = 75)]
    stride: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: std::path::PathBuf,
    #[arg(long)]
    data: Option<std::path::PathBuf>,
    #[arg(long)]
    seg: std::path::PathBuf,
    #[arg(long)]
    det: std::path::PathBuf,
    /// Which split to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Metrics JSON output (stdout if omitted).
    #[arg(long)]
    json: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
}

#[derive(Debug, Args)]
struct ParamCountArgs {
    /// Detector temporal window size (5, 7 or 9).
    #[arg(long, conflicts_with = "segmenter")]
    detector: Option<usize>,
    /// Count the reference segmenter instead.
    #[arg(long, default_value_t = false)]
    segmenter: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Which model to verify: dense, conv2d, conv3d, transpose, pools,
    /// detector-toy or detector-full.
    #[arg(long, default_value = "detector-full")]
    model: String,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 20)]
    samples: usize,
}

#[derive(Debug, Args)]
struct ArchSearchArgs {
    /// Target trainable-parameter count.
    #[arg(long)]
    target: u64,
    /// Print at most this many matches.
    #[arg(long)]
    limit: Option<usize>,
}

fn parse_filters(s: &str) -> Result<FilterTriple, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated counts, got '{s}'"));
    }
    let mut out = [0usize; 3];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("invalid filter count '{part}'"))?;
        if *slot == 0 {
            return Err("filter counts must be >= 1".into());
        }
    }
    Ok(FilterTriple(out))
}

#[derive(Debug, Clone, Copy)]
struct FilterTriple([usize; 3]);

#[derive(Debug, Clone, Copy)]
struct Plane {
    rows: usize,
    cols: usize,
}

fn parse_plane(s: &str) -> Result<Plane, String> {
    let (rows, cols) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS, got '{s}'"))?;
    Ok(Plane {
        rows: rows.trim().parse().map_err(|_| format!("bad rows in '{s}'"))?,
        cols: cols.trim().parse().map_err(|_| format!("bad cols in '{s}'"))?,
    })
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("ECHOPIPE_LOG")).init();
    let cli = Cli::parse();
    let threads = if cli.threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cli.threads
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: could not configure {threads} threads: {e}");
        std::process::exit(2);
    }
    log::info!("resolved config: {cli:?}");
    let code = match commands::run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    std::process::exit(code);
}
