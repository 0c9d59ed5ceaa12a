//! Video clips: ordered grayscale frame stacks, stored frame-major
//! (frame, row, col) with values in [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Binary classification target. `Infarct` (MI) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "N")]
    Normal,
    #[serde(rename = "MI")]
    Infarct,
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Class::Normal => write!(f, "N"),
            Class::Infarct => write!(f, "MI"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    data: Tensor<f32>,
    label: Option<Class>,
}

impl VideoClip {
    pub fn new(data: Tensor<f32>, label: Option<Class>) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::InvalidShape(format!(
                "video clips are (frame, row, col), got {}",
                data.shape()
            )));
        }
        Ok(VideoClip { data, label })
    }

    pub fn from_frames(frames: Vec<Tensor<f32>>, label: Option<Class>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("video needs at least one frame".into()))?;
        if first.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "frames are (row, col), got {}",
                first.shape()
            )));
        }
        let (h, w) = (first.dims()[0], first.dims()[1]);
        let mut data = Vec::with_capacity(frames.len() * h * w);
        for frame in &frames {
            if frame.dims() != [h, w] {
                return Err(Error::ShapeMismatch(format!(
                    "frame {} differs from first frame ({h},{w})",
                    frame.shape()
                )));
            }
            data.extend_from_slice(frame.data());
        }
        Ok(VideoClip {
            data: Tensor::from_vec(Shape::new(vec![frames.len(), h, w])?, data)?,
            label,
        })
    }

    pub fn frames(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn label(&self) -> Option<Class> {
        self.label
    }

    pub fn with_label(mut self, label: Option<Class>) -> Self {
        self.label = label;
        self
    }

    pub fn frame_slice(&self, index: usize) -> &[f32] {
        let len = self.height() * self.width();
        &self.data.data()[index * len..(index + 1) * len]
    }

    pub fn frame(&self, index: usize) -> Tensor<f32> {
        Tensor::from_vec(
            Shape::new(vec![self.height(), self.width()]).expect("frame dims valid"),
            self.frame_slice(index).to_vec(),
        )
        .expect("slice length matches")
    }
}
