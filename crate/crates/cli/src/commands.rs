//! Subcommand implementations.

use std::fmt;
use std::path::{Path, PathBuf};

use echopipe_core::datagen::{
    build_dataset, echo, load_video, read_manifest, DatasetConfig, DatasetManifest, Split,
};
use echopipe_core::eval::{
    classification_metrics, det_videos_from_manifest, render_table, seg_samples_from_manifest,
    train_detector_cv, train_detector_full, train_segmenter, write_report, EvalReport,
    TrainConfig,
};
use echopipe_core::io::atomic_write;
use echopipe_core::models::{
    arch_search, build_detector_at, build_segmenter_with, detector_input_shape, detector_layers,
    segmenter_input_shape, segmenter_layers, SegFilters, DETECTOR_INPUT,
};
use echopipe_core::nn::{
    count_parameters, gradcheck, read_model, write_model, Activation, GradCheckConfig, LayerSpec,
    LossKind, Model, Padding, PoolMode, RmsPropConfig,
};
use echopipe_core::pipeline::{
    detect_video, run_pipeline, segment_video, PipelineConfig, StageTimings, VideoVerdict,
};
use echopipe_core::tensor::{Shape, Tensor};
use echopipe_core::video::VideoClip;
use echopipe_core::windowing::BBox;
use echopipe_core::Error as CoreError;

use crate::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// Bad flag combination or value (exit 2).
    Usage(String),
    /// Malformed or missing data (exit 3).
    Core(CoreError),
    /// Numeric failure: divergence, non-finite values, failed checks (exit 4).
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Numeric(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if !e.is_data_error() => 4,
            CliError::Core(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::GenerateData(args) => generate_data(args, seed),
        Command::TrainSeg(args) => train_seg(args, seed),
        Command::TrainDet(args) => train_det(args, seed),
        Command::Segment(args) => segment(args),
        Command::Detect(args) => detect(args),
        Command::Pipeline(args) => pipeline(args),
        Command::Eval(args) => eval(args),
        Command::ParamCount(args) => param_count(args),
        Command::Gradcheck(args) => run_gradcheck(args, seed),
        Command::ArchSearch(args) => run_arch_search(args),
    }
}

fn data_dir(manifest_path: &Path, data: &Option<PathBuf>) -> PathBuf {
    data.clone().unwrap_or_else(|| {
        manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    Ok(read_manifest(path)?)
}

fn write_json(path: &Option<PathBuf>, payload: &str) -> Result<()> {
    match path {
        Some(p) => {
            atomic_write(p, payload.as_bytes())?;
            println!("wrote {}", p.display());
            Ok(())
        }
        None => {
            println!("{payload}");
            Ok(())
        }
    }
}

fn generate_data(args: crate::GenerateDataArgs, seed: u64) -> Result<()> {
    let config = DatasetConfig {
        n_videos: args.videos,
        class_ratio: args.ratio,
        seed,
        frames: args.frames,
        cycle_frames: args.cycle_frames,
        frame_h_range: (args.frame_h_min, args.frame_h_max),
        frame_w_range: (args.frame_w_min, args.frame_w_max),
        wall_thickness: args.wall_thickness,
        amplitude: args.amplitude,
        reduction: args.reduction,
        sector_width: args.sector_width,
        noise_std: args.noise,
        wall_blur: args.wall_blur,
        interior_speckle: args.interior_speckle,
        test_fraction: args.test_fraction,
        val_fraction: args.val_fraction,
        folds: args.folds,
        ..Default::default()
    };
    let manifest = build_dataset(&args.out, &config)?;
    let (train, val, test) = manifest.videos.iter().fold((0, 0, 0), |acc, v| match v.split {
        Split::Train => (acc.0 + 1, acc.1, acc.2),
        Split::Val => (acc.0, acc.1 + 1, acc.2),
        Split::Test => (acc.0, acc.1, acc.2 + 1),
    });
    println!(
        "generated {} videos into {} ({train} train / {val} val / {test} test, {} folds)",
        manifest.videos.len(),
        args.out.display(),
        manifest.folds
    );
    Ok(())
}

fn train_seg(args: crate::TrainSegArgs, seed: u64) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let dir = data_dir(&args.manifest, &args.data);
    let train = seg_samples_from_manifest(
        &manifest,
        &dir,
        Split::Train,
        args.frames_per_video,
        args.win(),
        args.stride(),
    )?;
    let val = seg_samples_from_manifest(
        &manifest,
        &dir,
        Split::Val,
        args.frames_per_video,
        args.win(),
        args.stride(),
    )?;
    println!("training on {} windows, validating on {}", train.len(), val.len());
    let filters = SegFilters {
        encoder: args.enc_filters.0,
        decoder: args.dec_filters.0,
    };
    let mut model = build_segmenter_with::<f32>(&filters, seed)?;
    let outcome = train_segmenter(
        &mut model,
        &train,
        &val,
        &TrainConfig {
            epochs: args.epochs,
            batch: args.batch,
            seed,
            optimizer: RmsPropConfig {
                learning_rate: args.lr,
                ..Default::default()
            },
        },
    )?;
    write_model(&args.out, &model)?;
    println!(
        "wrote {} (best epoch {}, val accuracy {})",
        args.out.display(),
        outcome.best_epoch,
        outcome
            .best_val_accuracy
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into())
    );
    if let Some(curves) = &args.curves {
        let json = serde_json::to_string_pretty(&outcome.curves)
            .map_err(|e| CliError::Core(CoreError::InvalidArgument(e.to_string())))?;
        atomic_write(curves, json.as_bytes())?;
        println!("wrote {}", curves.display());
    }
    Ok(())
}

impl crate::TrainSegArgs {
    fn win(&self) -> usize {
        150
    }
    fn stride(&self) -> usize {
        75
    }
}

fn train_det(args: crate::TrainDetArgs, seed: u64) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let dir = data_dir(&args.manifest, &args.data);
    let input = (args.input.rows, args.input.cols);
    let videos = det_videos_from_manifest(&manifest, &dir, input, args.w)?;
    println!(
        "cross-validating on {} videos x {} windows (w={}, input {}x{})",
        videos.len(),
        videos.first().map(|v| v.windows.len()).unwrap_or(0),
        args.w,
        input.0,
        input.1
    );
    let config = TrainConfig {
        epochs: args.epochs,
        batch: args.batch,
        seed,
        optimizer: RmsPropConfig {
            learning_rate: args.lr,
            ..Default::default()
        },
    };
    let cv = train_detector_cv(&videos, args.w, input, manifest.folds, &config)?;
    let report = EvalReport::from_outcomes(vec![cv])?;
    write_report(&args.report_dir, "report", &report)?;
    print!("{}", render_table(&report));
    println!(
        "wrote {}/report.json and report.txt",
        args.report_dir.display()
    );
    if let Some(out) = &args.out {
        let (model, _) = train_detector_full(&videos, args.w, input, &config)?;
        write_model(out, &model)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn load_video_file(path: &Path) -> Result<VideoClip> {
    Ok(echo::read_video(path)?)
}

fn segment(args: crate::SegmentArgs) -> Result<()> {
    let video = load_video_file(&args.input)?;
    let segmenter: Model<f32> = read_model(&args.weights)?;
    if segmenter.input_shape().dims() != [args.win, args.win, 1] {
        return Err(CliError::Usage(format!(
            "segmenter weights expect input {}, but --win is {}",
            segmenter.input_shape(),
            args.win
        )));
    }
    let config = PipelineConfig {
        win: args.win,
        stride: args.stride,
        ..Default::default()
    };
    let seg = segment_video(&video, &segmenter, &config)?;
    echo::write_video(&args.out, &seg.cropped)?;
    println!(
        "wrote {} (bbox top={} left={} {}x{}{})",
        args.out.display(),
        seg.bbox.top,
        seg.bbox.left,
        seg.bbox.height,
        seg.bbox.width,
        if seg.fallback { ", full-frame fallback" } else { "" }
    );
    if let Some(dir) = &args.overlay {
        write_overlays(dir, &video, &seg.bbox)?;
        println!("wrote {} overlay frames to {}", video.frames(), dir.display());
    }
    if let Some(json) = &args.json {
        let summary = serde_json::json!({
            "bbox": seg.bbox,
            "bbox_fallback": seg.fallback,
            "segment_ms": seg.segment_ms,
            "reconstruct_ms": seg.reconstruct_ms,
            "bbox_ms": seg.bbox_ms,
            "crop_ms": seg.crop_ms,
        });
        write_json(&Some(json.clone()), &serde_json::to_string_pretty(&summary).unwrap())?;
    }
    Ok(())
}

/// Per-frame portable graymap dumps with the bounding box burned in white.
fn write_overlays(dir: &Path, video: &VideoClip, bbox: &BBox) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Core(CoreError::InvalidArgument(format!(
            "cannot create {}: {e}",
            dir.display()
        )))
    })?;
    for f in 0..video.frames() {
        let (h, w) = (video.height(), video.width());
        let mut pixels: Vec<u8> = video
            .frame_slice(f)
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let (top, left) = (bbox.top, bbox.left);
        let (bottom, right) = (bbox.top + bbox.height - 1, bbox.left + bbox.width - 1);
        for c in left..=right {
            pixels[top * w + c] = 255;
            pixels[bottom * w + c] = 255;
        }
        for r in top..=bottom {
            pixels[r * w + left] = 255;
            pixels[r * w + right] = 255;
        }
        let mut pgm = format!("P5\n{w} {h}\n255\n").into_bytes();
        pgm.extend_from_slice(&pixels);
        atomic_write(&dir.join(format!("frame_{f:03}.pgm")), &pgm)?;
    }
    Ok(())
}

fn detect(args: crate::DetectArgs) -> Result<()> {
    let video = load_video_file(&args.input)?;
    let detector: Model<f32> = read_model(&args.weights)?;
    let config = PipelineConfig {
        threshold: args.threshold,
        ..Default::default()
    }
    .with_detector_input(&detector)?;
    let det = detect_video(&video, &detector, &config)?;
    let verdict = VideoVerdict {
        n_windows: det.classes.len() - det.mi_windows,
        probabilities: det.probabilities,
        classes: det.classes,
        final_class: det.final_class,
        mi_windows: det.mi_windows,
        bbox: BBox::full_frame(video.height(), video.width()),
        bbox_fallback: false,
        timings: StageTimings {
            resize_ms: det.resize_ms,
            detect_ms: det.detect_ms,
            total_ms: det.resize_ms + det.detect_ms,
            ..Default::default()
        },
    };
    let payload = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
    write_json(&args.json, &payload)
}

fn pipeline(args: crate::PipelineArgs) -> Result<()> {
    let video = load_video_file(&args.input)?;
    let segmenter: Model<f32> = read_model(&args.seg)?;
    let detector: Model<f32> = read_model(&args.det)?;
    let config = PipelineConfig {
        win: args.win,
        stride: args.stride,
        threshold: args.threshold,
        ..Default::default()
    }
    .with_detector_input(&detector)?;
    if let Some(w) = args.w {
        if w != config.detector_window {
            return Err(CliError::Usage(format!(
                "--w {w} does not match the detector weights (window {})",
                config.detector_window
            )));
        }
    }
    config.validate(&segmenter, &detector)?;
    let verdict = run_pipeline(&video, &segmenter, &detector, &config)?;
    let payload = serde_json::to_string_pretty(&verdict).expect("verdict serializes");
    write_json(&args.json, &payload)
}

fn eval(args: crate::EvalArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let dir = data_dir(&args.manifest, &args.data);
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split '{other}'; expected train, val or test"
            )))
        }
    };
    let segmenter: Model<f32> = read_model(&args.seg)?;
    let detector: Model<f32> = read_model(&args.det)?;
    let config = PipelineConfig {
        threshold: args.threshold,
        ..Default::default()
    }
    .with_detector_input(&detector)?;
    config.validate(&segmenter, &detector)?;

    let mut truth = Vec::new();
    let mut predicted = Vec::new();
    let mut per_video = Vec::new();
    for entry in manifest.videos.iter().filter(|v| v.split == split) {
        let video = load_video(&dir, entry)?;
        let verdict = run_pipeline(&video, &segmenter, &detector, &config)?;
        truth.push(entry.class);
        predicted.push(verdict.final_class);
        per_video.push(serde_json::json!({
            "id": entry.id,
            "truth": entry.class,
            "predicted": verdict.final_class,
            "mi_windows": verdict.mi_windows,
            "n_windows": verdict.n_windows,
            "bbox_fallback": verdict.bbox_fallback,
        }));
    }
    if truth.is_empty() {
        return Err(CliError::Usage(format!(
            "split '{}' holds no videos",
            args.split
        )));
    }
    let metrics = classification_metrics(&truth, &predicted)?;
    println!(
        "{} split: {} videos, accuracy {:.3}, P {:.3}, R {:.3}, F1 {:.3}",
        args.split,
        truth.len(),
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1
    );
    let payload = serde_json::to_string_pretty(&serde_json::json!({
        "split": args.split,
        "videos": truth.len(),
        "metrics": metrics,
        "per_video": per_video,
    }))
    .expect("metrics serialize");
    write_json(&args.json, &payload)
}

fn param_count(args: crate::ParamCountArgs) -> Result<()> {
    let count = match (args.detector, args.segmenter) {
        (Some(w), false) => count_parameters(
            &detector_layers(w)?,
            &detector_input_shape(w, DETECTOR_INPUT.0, DETECTOR_INPUT.1)?,
        )?,
        (None, true) => count_parameters(
            &segmenter_layers(&SegFilters::default(), 3),
            &segmenter_input_shape(),
        )?,
        _ => {
            return Err(CliError::Usage(
                "pass exactly one of --detector <w> or --segmenter".into(),
            ))
        }
    };
    println!("{count}");
    Ok(())
}

fn run_gradcheck(args: crate::GradcheckArgs, seed: u64) -> Result<()> {
    let (layers, input_shape, loss): (Vec<LayerSpec>, Shape, LossKind) = match args.model.as_str()
    {
        "dense" => (
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 5,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            Shape::new(vec![4, 3]).unwrap(),
            LossKind::Bce,
        ),
        "conv2d" => (
            vec![LayerSpec::Conv2d {
                filters: 4,
                kernel: (3, 3),
                stride: (1, 1),
                padding: Padding::None,
                activation: Activation::Relu,
            }],
            Shape::new(vec![8, 8, 2]).unwrap(),
            LossKind::Mse,
        ),
        "conv3d" => (
            vec![LayerSpec::Conv3d {
                filters: 4,
                kernel: (3, 3, 2),
                padding: Padding::None,
                activation: Activation::Relu,
            }],
            Shape::new(vec![8, 7, 5, 2]).unwrap(),
            LossKind::Mse,
        ),
        "transpose" => (
            vec![LayerSpec::TransposeConv2d {
                filters: 4,
                kernel: (3, 3),
                stride: (2, 2),
                activation: Activation::Relu,
            }],
            Shape::new(vec![5, 6, 3]).unwrap(),
            LossKind::Mse,
        ),
        "pools" => (
            vec![
                LayerSpec::Conv2d {
                    filters: 3,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: Padding::Preserve,
                    activation: Activation::None,
                },
                LayerSpec::MaxPool2d {
                    pool: (2, 2),
                    mode: PoolMode::Ceil,
                },
            ],
            Shape::new(vec![7, 7, 1]).unwrap(),
            LossKind::Mse,
        ),
        "detector-toy" => (
            vec![
                LayerSpec::Conv3d {
                    filters: 8,
                    kernel: (3, 3, 3),
                    padding: Padding::None,
                    activation: Activation::Relu,
                },
                LayerSpec::MaxPool3d {
                    pool: (2, 2, 1),
                    mode: PoolMode::Floor,
                },
                LayerSpec::Conv3d {
                    filters: 4,
                    kernel: (3, 3, 2),
                    padding: Padding::None,
                    activation: Activation::Relu,
                },
                LayerSpec::MaxPool3d {
                    pool: (2, 2, 1),
                    mode: PoolMode::Floor,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    units: 16,
                    activation: Activation::Relu,
                },
                LayerSpec::Dense {
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            ],
            Shape::new(vec![20, 20, 5, 1]).unwrap(),
            LossKind::Bce,
        ),
        "detector-full" => {
            let model: Model<f64> = build_detector_at(5, 46, 46, seed)?;
            (
                model.layers().to_vec(),
                model.input_shape().clone(),
                LossKind::Bce,
            )
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown gradcheck model '{other}'"
            )))
        }
    };
    let model: Model<f64> = Model::new(layers, input_shape.clone(), seed)?;
    let input = Tensor::random_uniform(input_shape, 1.0, seed.wrapping_add(101));
    let target = match loss {
        LossKind::Mse => Tensor::random_uniform(model.output_shape().clone(), 1.0, seed + 7),
        LossKind::Bce => Tensor::from_vec(Shape::new(vec![1]).unwrap(), vec![1.0]).unwrap(),
    };
    let report = gradcheck(
        &model,
        loss,
        &input,
        &target,
        GradCheckConfig {
            step: args.step,
            tolerance: args.tolerance,
            samples_per_block: args.samples,
            seed,
        },
    )?;
    println!("{}", report.summary());
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max rel err {:.3e} above {:.1e}",
            report.max_rel_err, report.tolerance
        )))
    }
}

fn run_arch_search(args: crate::ArchSearchArgs) -> Result<()> {
    let matches = arch_search(args.target);
    let shown = args.limit.unwrap_or(matches.len()).min(matches.len());
    for m in &matches[..shown] {
        println!(
            "kernel={} filters={}",
            m.kernel,
            m.filters
                .iter()
                .map(|f| f.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
    }
    println!(
        "{} configuration(s) with exactly {} trainable parameters",
        matches.len(),
        args.target
    );
    Ok(())
}
