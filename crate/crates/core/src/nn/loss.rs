//! Loss functions: mean squared error for the segmenter, binary
//! cross-entropy for the detector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Bce,
}

impl LossKind {
    pub fn value<E: Scalar>(self, prediction: &Tensor<E>, target: &Tensor<E>) -> Result<E> {
        match self {
            LossKind::Mse => mse(target, prediction),
            LossKind::Bce => {
                let (y, p) = bce_operands(prediction, target)?;
                Ok(bce(y, p))
            }
        }
    }

    /// dLoss/dPrediction, elementwise.
    pub fn gradient<E: Scalar>(self, prediction: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
        match self {
            LossKind::Mse => mse_grad(prediction, target),
            LossKind::Bce => {
                let (y, p) = bce_operands(prediction, target)?;
                Tensor::from_vec(prediction.shape().clone(), vec![bce_grad(y, p)])
            }
        }
    }
}

fn bce_operands<E: Scalar>(prediction: &Tensor<E>, target: &Tensor<E>) -> Result<(E, E)> {
    if prediction.numel() != 1 || target.numel() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "binary cross-entropy expects scalar prediction and target, got {} and {}",
            prediction.shape(),
            target.shape()
        )));
    }
    Ok((target.data()[0], prediction.data()[0]))
}

/// Mean squared error over all elements:
/// MSE(w, ŵ) = (1 / (w_h·w_w)) ΣΣ [w − ŵ]².
pub fn mse<E: Scalar>(actual: &Tensor<E>, predicted: &Tensor<E>) -> Result<E> {
    if actual.shape() != predicted.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mse: {} vs {}",
            actual.shape(),
            predicted.shape()
        )));
    }
    let sum: E = actual
        .data()
        .iter()
        .zip(predicted.data())
        .map(|(&a, &p)| {
            let d = a - p;
            d * d
        })
        .sum();
    Ok(sum / E::from_usize(actual.numel()).expect("usize fits"))
}

/// dMSE/dPredicted = 2(ŵ − w)/N.
pub fn mse_grad<E: Scalar>(predicted: &Tensor<E>, actual: &Tensor<E>) -> Result<Tensor<E>> {
    if actual.shape() != predicted.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mse_grad: {} vs {}",
            actual.shape(),
            predicted.shape()
        )));
    }
    let scale = E::of_f64(2.0) / E::from_usize(actual.numel()).expect("usize fits");
    Ok(Tensor::from_vec(
        predicted.shape().clone(),
        predicted
            .data()
            .iter()
            .zip(actual.data())
            .map(|(&p, &a)| (p - a) * scale)
            .collect(),
    )
    .expect("same shape"))
}

/// Binary cross-entropy of a single probability:
/// −[y·ln p + (1 − y)·ln(1 − p)], with p clamped to [ε, 1 − ε].
pub fn bce<E: Scalar>(y: E, p: E) -> E {
    let eps = E::of_f64(BCE_EPSILON);
    let p = clamp(p, eps, E::one() - eps);
    -(y * p.ln() + (E::one() - y) * (E::one() - p).ln())
}

/// dBCE/dp. Zero in the clamped regions, where the loss is constant in p.
pub fn bce_grad<E: Scalar>(y: E, p: E) -> E {
    let eps = E::of_f64(BCE_EPSILON);
    if p < eps || p > E::one() - eps {
        return E::zero();
    }
    -(y / p) + (E::one() - y) / (E::one() - p)
}

fn clamp<E: Scalar>(v: E, lo: E, hi: E) -> E {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}
