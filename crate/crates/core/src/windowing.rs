//! Sliding windows and their inverses: spatial window extraction, overlap-
//! aware mask reconstruction, per-video mode aggregation, minimum bounding
//! boxes, cropping, bilinear resizing, and temporal windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::video::VideoClip;

/// Anchor grid for square spatial windows. Anchors start at 0 and step by
/// `stride`; when the step sequence does not land exactly on `dim − win`, a
/// final anchor is added there so every pixel is covered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGrid {
    win: usize,
    stride: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

fn anchor_axis(dim: usize, win: usize, stride: usize) -> Vec<usize> {
    let last = dim - win;
    let mut anchors: Vec<usize> = (0..=last).step_by(stride).collect();
    if *anchors.last().expect("at least anchor 0") != last {
        anchors.push(last);
    }
    anchors
}

impl SpatialGrid {
    pub fn new(frame_h: usize, frame_w: usize, win: usize, stride: usize) -> Result<Self> {
        if win == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "window and stride must be >= 1".into(),
            ));
        }
        if stride >= win {
            return Err(Error::InvalidArgument(format!(
                "stride {stride} must be smaller than window {win} for overlap"
            )));
        }
        if win > frame_h || win > frame_w {
            return Err(Error::InvalidArgument(format!(
                "frame ({frame_h},{frame_w}) smaller than window {win}"
            )));
        }
        Ok(SpatialGrid {
            win,
            stride,
            rows: anchor_axis(frame_h, win, stride),
            cols: anchor_axis(frame_w, win, stride),
        })
    }

    pub fn win(&self) -> usize {
        self.win
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn row_anchors(&self) -> &[usize] {
        &self.rows
    }

    pub fn col_anchors(&self) -> &[usize] {
        &self.cols
    }

    /// (top, left) anchor pairs in row-major order.
    pub fn anchors(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.rows.len() * self.cols.len());
        for &r in &self.rows {
            for &c in &self.cols {
                out.push((r, c));
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.rows.len() * self.cols.len()
    }
}

fn expect_frame(frame: &Tensor<f32>) -> Result<(usize, usize)> {
    if frame.rank() != 2 {
        return Err(Error::InvalidShape(format!(
            "expected a (row, col) frame, got {}",
            frame.shape()
        )));
    }
    Ok((frame.dims()[0], frame.dims()[1]))
}

/// Cuts one window per grid anchor, in row-major anchor order.
pub fn spatial_windows(frame: &Tensor<f32>, grid: &SpatialGrid) -> Result<Vec<Tensor<f32>>> {
    let (h, w) = expect_frame(frame)?;
    if grid.rows.last().map(|&r| r + grid.win) > Some(h)
        || grid.cols.last().map(|&c| c + grid.win) > Some(w)
    {
        return Err(Error::InvalidArgument(format!(
            "grid built for a different frame size than ({h},{w})"
        )));
    }
    let win = grid.win;
    let data = frame.data();
    let shape = Shape::new(vec![win, win])?;
    let mut out = Vec::with_capacity(grid.count());
    for (top, left) in grid.anchors() {
        let mut values = Vec::with_capacity(win * win);
        for r in top..top + win {
            let start = r * w + left;
            values.extend_from_slice(&data[start..start + win]);
        }
        out.push(Tensor::from_vec(shape.clone(), values)?);
    }
    Ok(out)
}

fn check_binary(t: &Tensor<f32>, what: &str) -> Result<()> {
    if t.data().iter().all(|&v| v == 0.0 || v == 1.0) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be binary")))
    }
}

/// Inverse sliding window: per-pixel vote sums from overlapping binary
/// windows, normalized by coverage, then thresholded at 0.5 (ties round up
/// to 1). Output has the original frame dimensions.
pub fn reconstruct(
    windows: &[Tensor<f32>],
    grid: &SpatialGrid,
    frame_h: usize,
    frame_w: usize,
) -> Result<Tensor<f32>> {
    let anchors = grid.anchors();
    if windows.len() != anchors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} windows for {} anchors",
            windows.len(),
            anchors.len()
        )));
    }
    let win = grid.win;
    let mut votes = vec![0.0f32; frame_h * frame_w];
    let mut coverage = vec![0u32; frame_h * frame_w];
    for (window, (top, left)) in windows.iter().zip(anchors) {
        if window.dims() != [win, win] {
            return Err(Error::ShapeMismatch(format!(
                "window {} does not match grid window {win}",
                window.shape()
            )));
        }
        check_binary(window, "reconstruction input windows")?;
        if top + win > frame_h || left + win > frame_w {
            return Err(Error::InvalidArgument(format!(
                "anchor ({top},{left}) outside frame ({frame_h},{frame_w})"
            )));
        }
        let wdata = window.data();
        for r in 0..win {
            let dst = (top + r) * frame_w + left;
            let src = r * win;
            for k in 0..win {
                votes[dst + k] += wdata[src + k];
                coverage[dst + k] += 1;
            }
        }
    }
    let mask = votes
        .iter()
        .zip(&coverage)
        .map(|(&v, &c)| {
            if c == 0 {
                0.0
            } else if v / c as f32 >= 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::from_vec(Shape::new(vec![frame_h, frame_w])?, mask)
}

/// Rounds probabilities to a perfect binary mask: value >= 0.5 becomes 1.
pub fn round_mask(probabilities: &Tensor<f32>) -> Result<Tensor<f32>> {
    if probabilities
        .data()
        .iter()
        .any(|&v| !(0.0..=1.0).contains(&v))
    {
        return Err(Error::InvalidArgument(
            "round_mask input must lie in [0, 1]".into(),
        ));
    }
    Ok(probabilities.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }))
}

/// Per-frame binary masks of identical dimensions.
#[derive(Debug, Clone)]
pub struct MaskStack {
    masks: Vec<Tensor<f32>>,
}

impl MaskStack {
    pub fn new(masks: Vec<Tensor<f32>>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidArgument("mask stack needs at least one mask".into()))?;
        let dims = first.dims().to_vec();
        if first.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "masks are (row, col), got {}",
                first.shape()
            )));
        }
        for m in &masks {
            if m.dims() != dims {
                return Err(Error::ShapeMismatch(format!(
                    "mask {} differs from stack dims {:?}",
                    m.shape(),
                    dims
                )));
            }
            check_binary(m, "mask stack")?;
        }
        Ok(MaskStack { masks })
    }

    pub fn masks(&self) -> &[Tensor<f32>] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Statistical mode per pixel over the stack; a tie (even frame count) votes 1.
pub fn mode_mask(stack: &MaskStack) -> Tensor<f32> {
    let n = stack.len() as f32;
    let mut sums = vec![0.0f32; stack.masks[0].numel()];
    for m in &stack.masks {
        for (s, &v) in sums.iter_mut().zip(m.data()) {
            *s += v;
        }
    }
    let data = sums
        .into_iter()
        .map(|ones| if 2.0 * ones >= n { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(stack.masks[0].shape().clone(), data).expect("same shape")
}

/// Axis-aligned crop rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BBox {
    pub fn full_frame(height: usize, width: usize) -> Self {
        BBox {
            top: 0,
            left: 0,
            height,
            width,
        }
    }

    pub fn fits_in(&self, frame_h: usize, frame_w: usize) -> bool {
        self.height >= 1
            && self.width >= 1
            && self.top + self.height <= frame_h
            && self.left + self.width <= frame_w
    }
}

/// Tightest axis-aligned rectangle containing every 1-pixel. An empty mask is
/// an error; callers fall back to the full frame.
pub fn min_bbox(mask: &Tensor<f32>) -> Result<BBox> {
    let (h, w) = expect_frame(mask)?;
    check_binary(mask, "min_bbox input")?;
    let data = mask.data();
    let mut top = h;
    let mut bottom = 0usize;
    let mut left = w;
    let mut right = 0usize;
    let mut any = false;
    for r in 0..h {
        for c in 0..w {
            if data[r * w + c] == 1.0 {
                any = true;
                top = top.min(r);
                bottom = bottom.max(r);
                left = left.min(c);
                right = right.max(c);
            }
        }
    }
    if !any {
        return Err(Error::EmptyMask);
    }
    Ok(BBox {
        top,
        left,
        height: bottom - top + 1,
        width: right - left + 1,
    })
}

/// Crops every frame to the box; frame order is preserved.
pub fn crop_video(video: &VideoClip, bbox: &BBox) -> Result<VideoClip> {
    if !bbox.fits_in(video.height(), video.width()) {
        return Err(Error::InvalidArgument(format!(
            "bbox {bbox:?} does not fit in frame ({},{})",
            video.height(),
            video.width()
        )));
    }
    let w = video.width();
    let mut data = Vec::with_capacity(video.frames() * bbox.height * bbox.width);
    for f in 0..video.frames() {
        let frame = video.frame_slice(f);
        for r in bbox.top..bbox.top + bbox.height {
            let start = r * w + bbox.left;
            data.extend_from_slice(&frame[start..start + bbox.width]);
        }
    }
    VideoClip::new(
        Tensor::from_vec(
            Shape::new(vec![video.frames(), bbox.height, bbox.width])?,
            data,
        )?,
        video.label(),
    )
}

/// Bilinear sample positions: corner-aligned (src = dst·(in−1)/(out−1));
/// a single-sample output axis takes the center (in−1)/2.
fn sample_positions(in_dim: usize, out_dim: usize) -> Vec<(usize, usize, f32)> {
    (0..out_dim)
        .map(|i| {
            let src = if out_dim == 1 {
                (in_dim - 1) as f32 / 2.0
            } else {
                i as f32 * (in_dim - 1) as f32 / (out_dim - 1) as f32
            };
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_dim - 1);
            (lo, hi, src - lo as f32)
        })
        .collect()
}

fn resize_frame(frame: &[f32], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let rows = sample_positions(in_h, out_h);
    let cols = sample_positions(in_w, out_w);
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let v00 = frame[r0 * in_w + c0];
            let v01 = frame[r0 * in_w + c1];
            let v10 = frame[r1 * in_w + c0];
            let v11 = frame[r1 * in_w + c1];
            let top = v00 + (v01 - v00) * fc;
            let bottom = v10 + (v11 - v10) * fc;
            out.push(top + (bottom - top) * fr);
        }
    }
    out
}

/// Per-frame bilinear resize; values stay inside [0, 1] because every output
/// is a convex combination of inputs.
pub fn resize_bilinear(video: &VideoClip, target_h: usize, target_w: usize) -> Result<VideoClip> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::InvalidArgument("resize targets must be >= 1".into()));
    }
    if target_h == video.height() && target_w == video.width() {
        return Ok(video.clone());
    }
    let mut data = Vec::with_capacity(video.frames() * target_h * target_w);
    for f in 0..video.frames() {
        data.extend(resize_frame(
            video.frame_slice(f),
            video.height(),
            video.width(),
            target_h,
            target_w,
        ));
    }
    VideoClip::new(
        Tensor::from_vec(
            Shape::new(vec![video.frames(), target_h, target_w])?,
            data,
        )?,
        video.label(),
    )
}

/// Temporal window layout: consecutive stacks of `win_t` frames, stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalGrid {
    pub frames: usize,
    pub win_t: usize,
}

impl TemporalGrid {
    pub fn new(frames: usize, win_t: usize) -> Result<Self> {
        if win_t == 0 {
            return Err(Error::InvalidArgument("temporal window must be >= 1".into()));
        }
        if frames < win_t {
            return Err(Error::InvalidArgument(format!(
                "video has {frames} frames, fewer than the temporal window {win_t}"
            )));
        }
        Ok(TemporalGrid { frames, win_t })
    }

    pub fn count(&self) -> usize {
        self.frames - self.win_t + 1
    }
}

/// Extracts `frames − win_t + 1` windows; window `i` holds frames
/// [i, i + win_t) as an (h, w, win_t) tensor matching the 3D-CNN layout.
pub fn temporal_windows(video: &VideoClip, win_t: usize) -> Result<Vec<Tensor<f32>>> {
    let grid = TemporalGrid::new(video.frames(), win_t)?;
    let h = video.height();
    let w = video.width();
    let shape = Shape::new(vec![h, w, win_t])?;
    let mut out = Vec::with_capacity(grid.count());
    for start in 0..grid.count() {
        let mut data = vec![0.0f32; h * w * win_t];
        for t in 0..win_t {
            let frame = video.frame_slice(start + t);
            for r in 0..h {
                for c in 0..w {
                    data[(r * w + c) * win_t + t] = frame[r * w + c];
                }
            }
        }
        out.push(Tensor::from_vec(shape.clone(), data)?);
    }
    Ok(out)
}
