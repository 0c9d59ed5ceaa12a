//! Two-stage echocardiography analysis pipeline.
//!
//! Stage one slices video frames into overlapping 150x150 spatial windows,
//! segments the left ventricle with a 2D encoder-decoder CNN, reassembles the
//! per-window masks, aggregates them per video and crops to the minimum
//! bounding box. Stage two resizes the cropped clip, cuts overlapping
//! temporal windows and classifies each with a 3D CNN; the per-video verdict
//! is the statistical mode of the window classes.
//!
//! Everything runs on the CPU in plain Rust, deterministically for a fixed
//! seed: the tensor kernels, training (MSE / binary cross-entropy under
//! RMSProp), finite-difference gradient checking, the synthetic phantom data
//! generator, and the `ECHO` / `MDLW` file formats.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod video;
pub mod windowing;

pub use error::{Error, Result};
pub use tensor::{NumericWidth, Scalar, Shape, Tensor};
pub use video::{Class, VideoClip};
