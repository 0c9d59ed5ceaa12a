//! Dense row-major N-dimensional arrays over `f32` or `f64`.
//!
//! Everything downstream (frames, windows, activations, weights) is stored in
//! one of these. Tensors are immutable from the caller's perspective: every
//! public operation returns a fresh tensor. There is no broadcasting; callers
//! reshape explicitly.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::distr::uniform::SampleUniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric width of a tensor element, recorded in weight files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NumericWidth {
    F32,
    F64,
}

impl NumericWidth {
    pub fn byte_len(self) -> usize {
        match self {
            NumericWidth::F32 => 4,
            NumericWidth::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NumericWidth::F32 => "f32",
            NumericWidth::F64 => "f64",
        }
    }
}

/// Element type for tensors: `f32` for training and inference, `f64` for
/// finite-difference gradient verification.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + SampleUniform
    + Default
    + Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const WIDTH: NumericWidth;

    /// Lossy conversion from an f64 literal or intermediate.
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const WIDTH: NumericWidth = NumericWidth::F32;

    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const WIDTH: NumericWidth = NumericWidth::F64;

    fn of_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

/// Axis extents of a tensor. Every extent is at least 1 and the element count
/// fits in `usize`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(Error::InvalidShape("rank must be >= 1".into()));
        }
        let mut count: usize = 1;
        for &d in &dims {
            if d == 0 {
                return Err(Error::InvalidShape(format!(
                    "zero extent in {dims:?}; every extent must be >= 1"
                )));
            }
            count = count
                .checked_mul(d)
                .ok_or_else(|| Error::InvalidShape(format!("element count of {dims:?} overflows")))?;
        }
        Ok(Shape { dims })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat row-major offset of a multi-index (last axis fastest).
    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(Error::InvalidArgument(format!(
                "index rank {} does not match shape rank {}",
                index.len(),
                self.dims.len()
            )));
        }
        let mut flat = 0usize;
        for (i, (&ix, &dim)) in index.iter().zip(&self.dims).enumerate() {
            if ix >= dim {
                return Err(Error::InvalidArgument(format!(
                    "index {ix} out of bounds for axis {i} with extent {dim}"
                )));
            }
            flat = flat * dim + ix;
        }
        Ok(flat)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Scalar = f32> {
    shape: Shape,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![E::zero(); n],
        }
    }

    pub fn fill(shape: Shape, value: E) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<E>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {} with {} elements",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Deterministic uniform draws from `[-limit, +limit]`.
    pub fn random_uniform(shape: Shape, limit: E, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.numel();
        let data = (0..n)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn at(&self, index: &[usize]) -> Result<E> {
        Ok(self.data[self.shape.flat_index(index)?])
    }

    /// Reinterpret the same row-major data under a new shape without copying.
    pub fn into_reshaped(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} elements into {shape}",
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn reshaped(&self, shape: Shape) -> Result<Self> {
        self.clone().into_reshaped(shape)
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, op: &str, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{op}: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: E) -> Self {
        self.map(|v| v * factor)
    }

    pub fn sum(&self) -> E {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> E {
        self.sum() / E::from_usize(self.data.len()).expect("usize fits in float")
    }

    pub fn max(&self) -> E {
        self.data
            .iter()
            .copied()
            .fold(E::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    /// All public operations are expected to keep values finite; this is the
    /// explicit check used at operation boundaries that can break that.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }
}

/// Convenience for tests and small literals: a rank-1 tensor.
pub fn tensor1<E: Scalar>(values: &[E]) -> Tensor<E> {
    Tensor::from_vec(Shape::new(vec![values.len()]).expect("non-empty"), values.to_vec())
        .expect("length matches")
}
