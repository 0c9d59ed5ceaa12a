//! Evaluation metrics, the training harnesses, 5-fold cross-validation and
//! report emission.

mod report;
mod train;

pub use report::{render_table, write_report, EvalReport, WindowReport, REPORT_SCHEMA_VERSION};
pub use train::{
    det_videos_from_manifest, seg_samples_for_video, seg_samples_from_manifest,
    train_detector_cv, train_detector_full, train_segmenter, CvOutcome, CvSummary, DetVideo,
    EpochStats, FoldResult, MetricAggregate, SegSample, TrainConfig, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mse;
use crate::tensor::{Scalar, Tensor};
use crate::video::Class;

/// Segmentation accuracy: 1 − MSE(w, ŵ).
pub fn seg_accuracy<E: Scalar>(actual: &Tensor<E>, predicted: &Tensor<E>) -> Result<f64> {
    Ok(1.0 - mse(actual, predicted)?.as_f64())
}

/// Confusion counts and derived fractions with MI as the positive class.
/// A zero denominator reports 0 with the corresponding `*_defined` flag
/// cleared instead of being omitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub precision_defined: bool,
    pub recall_defined: bool,
    pub f1_defined: bool,
}

pub fn classification_metrics(truth: &[Class], predicted: &[Class]) -> Result<Metrics> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute metrics over empty label lists".into(),
        ));
    }
    if truth.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truth labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut tn = 0;
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (Class::Infarct, Class::Infarct) => tp += 1,
            (Class::Normal, Class::Infarct) => fp += 1,
            (Class::Infarct, Class::Normal) => fn_ += 1,
            (Class::Normal, Class::Normal) => tn += 1,
        }
    }
    let precision_defined = tp + fp > 0;
    let recall_defined = tp + fn_ > 0;
    let precision = if precision_defined {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if recall_defined {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1_defined = precision_defined && recall_defined && precision + recall > 0.0;
    let f1 = if f1_defined {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let accuracy = (tp + tn) as f64 / truth.len() as f64;
    Ok(Metrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
        accuracy,
        precision_defined,
        recall_defined,
        f1_defined,
    })
}
