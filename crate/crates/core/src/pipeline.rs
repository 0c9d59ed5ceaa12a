//! End-to-end orchestration: raw video → spatial windows → segmenter →
//! reconstructed masks → mode mask → bbox crop → resize → temporal windows →
//! detector → per-window probabilities → video-level class.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{Shape, Tensor};
use crate::video::{Class, VideoClip};
use crate::windowing::{
    crop_video, min_bbox, mode_mask, reconstruct, resize_bilinear, round_mask, spatial_windows,
    temporal_windows, BBox, MaskStack, SpatialGrid,
};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Spatial window side in pixels.
    pub win: usize,
    /// Spatial stride in pixels (50% overlap at the default 75).
    pub stride: usize,
    /// Temporal window size (5, 7 or 9 frames).
    pub detector_window: usize,
    /// Plane every cropped clip is resized to before detection (rows, cols).
    pub resize: (usize, usize),
    /// Sigmoid threshold for calling a window MI.
    pub threshold: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            win: 150,
            stride: 75,
            detector_window: 5,
            resize: (236, 183),
            threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    /// Derives the detector-side fields from loaded weights: the model input
    /// is (rows, cols, win_t, 1).
    pub fn with_detector_input(mut self, detector: &Model<f32>) -> Result<Self> {
        let dims = detector.input_shape().dims();
        if dims.len() != 4 || dims[3] != 1 {
            return Err(Error::InvalidArgument(format!(
                "detector input {} is not (rows, cols, win_t, 1)",
                detector.input_shape()
            )));
        }
        self.resize = (dims[0], dims[1]);
        self.detector_window = dims[2];
        Ok(self)
    }

    pub fn validate(&self, segmenter: &Model<f32>, detector: &Model<f32>) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) || self.threshold <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.stride >= self.win {
            return Err(Error::InvalidArgument(
                "stride must be smaller than the window".into(),
            ));
        }
        let seg_in = segmenter.input_shape().dims();
        if seg_in != [self.win, self.win, 1] {
            return Err(Error::InvalidArgument(format!(
                "segmenter expects input ({},{},1)-windows, config says {}",
                seg_in[0], seg_in[1], self.win
            )));
        }
        let det_in = detector.input_shape().dims();
        if det_in != [self.resize.0, self.resize.1, self.detector_window, 1] {
            return Err(Error::InvalidArgument(format!(
                "detector input {} does not match configured resize {:?} and window {}",
                detector.input_shape(),
                self.resize,
                self.detector_window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub segment_ms: f64,
    pub reconstruct_ms: f64,
    pub bbox_ms: f64,
    pub crop_ms: f64,
    pub resize_ms: f64,
    pub detect_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoVerdict {
    /// Per-temporal-window MI probabilities, in window order.
    pub probabilities: Vec<f32>,
    pub classes: Vec<Class>,
    /// Statistical mode of the window classes; ties go to MI.
    pub final_class: Class,
    pub mi_windows: usize,
    pub n_windows: usize,
    pub bbox: BBox,
    /// True when the mode mask was empty and the full frame was used instead.
    pub bbox_fallback: bool,
    pub timings: StageTimings,
}

pub struct Segmentation {
    pub cropped: VideoClip,
    pub bbox: BBox,
    pub fallback: bool,
    pub frame_masks: Vec<Tensor<f32>>,
    pub segment_ms: f64,
    pub reconstruct_ms: f64,
    pub bbox_ms: f64,
    pub crop_ms: f64,
}

/// Anything that maps one (win, win, 1) window to a (win, win, 1)
/// probability mask. The window's (top, left) anchor is passed along;
/// trained models ignore it, test oracles may key on it.
pub trait WindowSegmenter: Sync {
    fn segment_window(&self, window: &Tensor<f32>, anchor: (usize, usize)) -> Result<Tensor<f32>>;
}

impl WindowSegmenter for Model<f32> {
    fn segment_window(&self, window: &Tensor<f32>, _anchor: (usize, usize)) -> Result<Tensor<f32>> {
        self.forward(window)
    }
}

fn seg_window_shape(win: usize) -> Shape {
    Shape::new(vec![win, win, 1]).expect("window dims valid")
}

/// Runs the segmenter over every spatial window of every frame, reassembles
/// per-frame masks, aggregates the video-level mode mask and crops to its
/// minimum bounding box. An empty mode mask falls back to the full frame.
pub fn segment_video<S: WindowSegmenter>(
    video: &VideoClip,
    segmenter: &S,
    config: &PipelineConfig,
) -> Result<Segmentation> {
    let grid = SpatialGrid::new(video.height(), video.width(), config.win, config.stride)?;
    let window_shape = seg_window_shape(config.win);
    let flat_shape = Shape::new(vec![config.win, config.win])?;

    let t0 = Instant::now();
    let predicted: Vec<Vec<Tensor<f32>>> = (0..video.frames())
        .map(|f| {
            let windows = spatial_windows(&video.frame(f), &grid)?;
            windows
                .into_par_iter()
                .zip(grid.anchors())
                .map(|(w, anchor)| {
                    let shaped = w.into_reshaped(window_shape.clone())?;
                    let out = segmenter.segment_window(&shaped, anchor)?;
                    round_mask(&out.into_reshaped(flat_shape.clone())?)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let segment_ms = ms_since(t0);

    let t1 = Instant::now();
    let frame_masks: Vec<Tensor<f32>> = predicted
        .into_iter()
        .map(|windows| reconstruct(&windows, &grid, video.height(), video.width()))
        .collect::<Result<Vec<_>>>()?;
    let reconstruct_ms = ms_since(t1);

    let t2 = Instant::now();
    let video_mask = mode_mask(&MaskStack::new(frame_masks.clone())?);
    let (bbox, fallback) = match min_bbox(&video_mask) {
        Ok(b) => (b, false),
        Err(Error::EmptyMask) => {
            log::warn!("empty mode mask; falling back to the full frame");
            (BBox::full_frame(video.height(), video.width()), true)
        }
        Err(e) => return Err(e),
    };
    let bbox_ms = ms_since(t2);

    let t3 = Instant::now();
    let cropped = crop_video(video, &bbox)?;
    let crop_ms = ms_since(t3);

    Ok(Segmentation {
        cropped,
        bbox,
        fallback,
        frame_masks,
        segment_ms,
        reconstruct_ms,
        bbox_ms,
        crop_ms,
    })
}

pub struct Detection {
    pub probabilities: Vec<f32>,
    pub classes: Vec<Class>,
    pub final_class: Class,
    pub mi_windows: usize,
    pub resize_ms: f64,
    pub detect_ms: f64,
}

/// Probability of MI for one prepared (h, w, win_t) window.
pub fn detect_window(detector: &Model<f32>, window: Tensor<f32>) -> Result<f32> {
    let dims = window.dims().to_vec();
    let shaped = window.into_reshaped(Shape::new(vec![dims[0], dims[1], dims[2], 1])?)?;
    Ok(detector.forward(&shaped)?.data()[0])
}

/// Statistical mode over window classes; a tie votes MI.
pub fn mode_vote(classes: &[Class]) -> Class {
    let mi = classes.iter().filter(|&&c| c == Class::Infarct).count();
    if 2 * mi >= classes.len() {
        Class::Infarct
    } else {
        Class::Normal
    }
}

/// Resizes a cropped clip, cuts temporal windows, classifies each and takes
/// the mode vote.
pub fn detect_video(
    cropped: &VideoClip,
    detector: &Model<f32>,
    config: &PipelineConfig,
) -> Result<Detection> {
    let t0 = Instant::now();
    let resized = resize_bilinear(cropped, config.resize.0, config.resize.1)?;
    let resize_ms = ms_since(t0);

    let t1 = Instant::now();
    let windows = temporal_windows(&resized, config.detector_window)?;
    let probabilities: Vec<f32> = windows
        .into_par_iter()
        .map(|w| detect_window(detector, w))
        .collect::<Result<Vec<_>>>()?;
    for &p in &probabilities {
        if !p.is_finite() {
            return Err(Error::NonFinite("detector probability".into()));
        }
    }
    let classes: Vec<Class> = probabilities
        .iter()
        .map(|&p| {
            if p >= config.threshold {
                Class::Infarct
            } else {
                Class::Normal
            }
        })
        .collect();
    let final_class = mode_vote(&classes);
    let mi_windows = classes.iter().filter(|&&c| c == Class::Infarct).count();
    let detect_ms = ms_since(t1);

    Ok(Detection {
        probabilities,
        classes,
        final_class,
        mi_windows,
        resize_ms,
        detect_ms,
    })
}

/// The full two-stage pipeline; a pure function of (weights, video, config).
pub fn run_pipeline(
    video: &VideoClip,
    segmenter: &Model<f32>,
    detector: &Model<f32>,
    config: &PipelineConfig,
) -> Result<VideoVerdict> {
    config.validate(segmenter, detector)?;
    let t0 = Instant::now();
    let seg = segment_video(video, segmenter, config)?;
    let det = detect_video(&seg.cropped, detector, config)?;
    let total_ms = ms_since(t0);
    let n_windows = det.classes.len() - det.mi_windows;
    Ok(VideoVerdict {
        probabilities: det.probabilities,
        classes: det.classes,
        final_class: det.final_class,
        mi_windows: det.mi_windows,
        n_windows,
        bbox: seg.bbox,
        bbox_fallback: seg.fallback,
        timings: StageTimings {
            segment_ms: seg.segment_ms,
            reconstruct_ms: seg.reconstruct_ms,
            bbox_ms: seg.bbox_ms,
            crop_ms: seg.crop_ms,
            resize_ms: det.resize_ms,
            detect_ms: det.detect_ms,
            total_ms,
        },
    })
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
