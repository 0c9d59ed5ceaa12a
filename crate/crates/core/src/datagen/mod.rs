//! Synthetic phantom echocardiography videos with analytically known chamber
//! geometry, plus dataset manifests and splits.
//!
//! A phantom is an ellipical bright-walled chamber with dark interior over a
//! mid-gray background. The wall radius oscillates over a cardiac cycle; an
//! infarct phantom damps that motion inside a hypokinetic angular sector.
//! The ground-truth rectangle is the analytic bound of the chamber at
//! maximal dilation, so it encloses the wall on every frame.

pub mod echo;
mod manifest;

pub use manifest::{
    build_dataset, load_video, read_manifest, regenerate, write_manifest, DatasetConfig,
    DatasetManifest, Split, VideoEntry,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::{Shape, Tensor};
use crate::video::{Class, VideoClip};
use crate::windowing::BBox;

const BACKGROUND: f64 = 0.18;
const INTERIOR: f64 = 0.05;
const WALL: f64 = 0.9;
const BLURRED_WALL: f64 = 0.55;
/// Half-width of the soft wall edge, in pixels.
const EDGE_SOFTNESS: f64 = 1.5;
/// Blur widens the soft edge by this factor on the left wall.
const BLUR_FACTOR: f64 = 4.0;

/// Hypokinetic sector of an infarct phantom: wall motion inside
/// [start, start + width) (radians) is scaled by `reduction` < 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypoSector {
    pub start: f64,
    pub width: f64,
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub frame_h: usize,
    pub frame_w: usize,
    pub frames: usize,
    pub cycle_frames: usize,
    /// Chamber center (row, col).
    pub center: (f64, f64),
    /// Inner-boundary semi-axes at maximal dilation (rows, cols).
    pub axes: (f64, f64),
    pub wall_thickness: f64,
    /// Fraction of radius lost at peak contraction, in [0, 1).
    pub amplitude: f64,
    pub class: Class,
    /// Required for `Class::Infarct`, forbidden for `Class::Normal`.
    pub hypo_sector: Option<HypoSector>,
    pub noise_std: f64,
    pub wall_blur: bool,
    pub interior_speckle: bool,
    pub seed: u64,
}

impl PhantomConfig {
    /// Radial margin beyond the inner boundary that can carry wall intensity.
    fn wall_margin(&self) -> f64 {
        self.wall_thickness + BLUR_FACTOR * EDGE_SOFTNESS
    }

    /// Outer semi-axes of the wall at maximal dilation, including soft edges.
    fn outer_axes(&self) -> (f64, f64) {
        let min_ax = self.axes.0.min(self.axes.1);
        let factor = 1.0 + self.wall_margin() / min_ax;
        (self.axes.0 * factor, self.axes.1 * factor)
    }

    pub fn validate(&self) -> Result<()> {
        for (dim, name) in [(self.frame_h, "frame_h"), (self.frame_w, "frame_w")] {
            if !(256..=512).contains(&dim) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {dim} outside the emulated source range 256..=512"
                )));
            }
        }
        if self.frames < 25 {
            return Err(Error::InvalidArgument(format!(
                "frames = {} below the 25-frame minimum",
                self.frames
            )));
        }
        if self.cycle_frames < 2 {
            return Err(Error::InvalidArgument("cycle_frames must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.amplitude) {
            return Err(Error::InvalidArgument(format!(
                "amplitude {} outside [0, 1)",
                self.amplitude
            )));
        }
        if self.axes.0 <= 0.0 || self.axes.1 <= 0.0 || self.wall_thickness <= 0.0 {
            return Err(Error::InvalidArgument(
                "axes and wall thickness must be positive".into(),
            ));
        }
        match (self.class, &self.hypo_sector) {
            (Class::Infarct, Some(s)) => {
                if !(0.0..1.0).contains(&s.reduction) {
                    return Err(Error::InvalidArgument(format!(
                        "hypokinetic reduction {} must be in [0, 1)",
                        s.reduction
                    )));
                }
                if s.width <= 0.0 || s.width > std::f64::consts::TAU {
                    return Err(Error::InvalidArgument(
                        "hypokinetic sector width must be in (0, 2π]".into(),
                    ));
                }
            }
            (Class::Infarct, None) => {
                return Err(Error::InvalidArgument(
                    "infarct phantoms need a hypokinetic sector".into(),
                ))
            }
            (Class::Normal, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "normal phantoms must not define a hypokinetic sector".into(),
                ))
            }
            (Class::Normal, None) => {}
        }
        let (out_r, out_c) = self.outer_axes();
        if self.center.0 - out_r < 0.0
            || self.center.0 + out_r > (self.frame_h - 1) as f64
            || self.center.1 - out_c < 0.0
            || self.center.1 + out_c > (self.frame_w - 1) as f64
        {
            return Err(Error::InvalidArgument(
                "chamber (including wall) exceeds the frame".into(),
            ));
        }
        Ok(())
    }

    /// Ground-truth rectangle: analytic bound of the chamber at maximal
    /// dilation, clamped to the frame.
    pub fn ground_truth_bbox(&self) -> BBox {
        let (out_r, out_c) = self.outer_axes();
        let top = (self.center.0 - out_r).floor().max(0.0) as usize;
        let bottom = ((self.center.0 + out_r).ceil() as usize).min(self.frame_h - 1);
        let left = (self.center.1 - out_c).floor().max(0.0) as usize;
        let right = ((self.center.1 + out_c).ceil() as usize).min(self.frame_w - 1);
        BBox {
            top,
            left,
            height: bottom - top + 1,
            width: right - left + 1,
        }
    }
}

pub struct Phantom {
    pub video: VideoClip,
    pub mask_rect: BBox,
}

/// Radial contraction scale at frame `t` for direction `theta`: 1 at
/// diastole (t = 0 mod cycle), down to 1 − amplitude at peak systole;
/// inside the hypokinetic sector of an infarct the amplitude is reduced.
fn radial_scale(config: &PhantomConfig, t: usize, theta: f64) -> f64 {
    let phase = std::f64::consts::TAU * (t % config.cycle_frames) as f64
        / config.cycle_frames as f64;
    let contraction = (1.0 - phase.cos()) / 2.0;
    let mut amplitude = config.amplitude;
    if let Some(sector) = &config.hypo_sector {
        let rel = (theta - sector.start).rem_euclid(std::f64::consts::TAU);
        if rel < sector.width {
            amplitude *= sector.reduction;
        }
    }
    1.0 - amplitude * contraction
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t.clamp(0.0, 1.0)
}

/// Noiseless intensity at one pixel of one frame.
fn render_pixel(config: &PhantomConfig, t: usize, row: usize, col: usize) -> f64 {
    let dy = row as f64 - config.center.0;
    let dx = col as f64 - config.center.1;
    let theta = dy.atan2(dx);
    let s = radial_scale(config, t, theta);
    let min_ax = config.axes.0.min(config.axes.1) * s;
    let rho = ((dx / (config.axes.1 * s)).powi(2) + (dy / (config.axes.0 * s)).powi(2)).sqrt();

    let blurred = config.wall_blur && dx < 0.0;
    let softness = if blurred {
        EDGE_SOFTNESS * BLUR_FACTOR
    } else {
        EDGE_SOFTNESS
    };
    let wall_value = if blurred { BLURRED_WALL } else { WALL };
    // Soft edges expressed in normalized radius units.
    let sw = softness / min_ax;
    let rho_out = 1.0 + config.wall_thickness / min_ax;

    if rho < 1.0 - sw {
        INTERIOR
    } else if rho < 1.0 {
        lerp(INTERIOR, wall_value, (rho - (1.0 - sw)) / sw)
    } else if rho <= rho_out {
        wall_value
    } else if rho < rho_out + sw {
        lerp(wall_value, BACKGROUND, (rho - rho_out) / sw)
    } else {
        BACKGROUND
    }
}

fn render_frame(config: &PhantomConfig, t: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, t as u64));
    let mut frame = Vec::with_capacity(config.frame_h * config.frame_w);
    for row in 0..config.frame_h {
        for col in 0..config.frame_w {
            let mut v = render_pixel(config, t, row, col);
            if config.interior_speckle {
                // Bright speckle dots inside the chamber.
                let gate: f64 = rng.random();
                let level: f64 = rng.random();
                let dy = row as f64 - config.center.0;
                let dx = col as f64 - config.center.1;
                let rho = ((dx / config.axes.1).powi(2) + (dy / config.axes.0).powi(2)).sqrt();
                if rho < 0.85 && gate < 0.03 {
                    v = v.max(0.45 + 0.4 * level);
                }
            }
            if config.noise_std > 0.0 {
                let n: f64 = StandardNormal.sample(&mut rng);
                v += config.noise_std * n;
            }
            frame.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    frame
}

/// Renders a phantom video and its ground-truth rectangle. Deterministic per
/// seed; frames render in parallel on independent per-frame streams.
pub fn generate_phantom(config: &PhantomConfig) -> Result<Phantom> {
    config.validate()?;
    let frames: Vec<Vec<f32>> = (0..config.frames)
        .into_par_iter()
        .map(|t| render_frame(config, t))
        .collect();
    let mut data = Vec::with_capacity(config.frames * config.frame_h * config.frame_w);
    for frame in frames {
        data.extend_from_slice(&frame);
    }
    let video = VideoClip::new(
        Tensor::from_vec(
            Shape::new(vec![config.frames, config.frame_h, config.frame_w])?,
            data,
        )?,
        Some(config.class),
    )?;
    video.data().check_finite("phantom video")?;
    Ok(Phantom {
        video,
        mask_rect: config.ground_truth_bbox(),
    })
}

/// Full-frame binary mask of a rectangle, the training label for a video.
pub fn rect_mask(frame_h: usize, frame_w: usize, rect: &BBox) -> Tensor<f32> {
    let mut data = vec![0.0f32; frame_h * frame_w];
    for r in rect.top..rect.top + rect.height {
        for c in rect.left..rect.left + rect.width {
            data[r * frame_w + c] = 1.0;
        }
    }
    Tensor::from_vec(
        Shape::new(vec![frame_h, frame_w]).expect("frame dims valid"),
        data,
    )
    .expect("length matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_config(seed: u64) -> PhantomConfig {
        PhantomConfig {
            frame_h: 256,
            frame_w: 300,
            frames: 25,
            cycle_frames: 25,
            center: (128.0, 150.0),
            axes: (62.0, 50.0),
            wall_thickness: 6.0,
            amplitude: 0.35,
            class: Class::Normal,
            hypo_sector: None,
            noise_std: 0.0,
            wall_blur: false,
            interior_speckle: false,
            seed,
        }
    }

    fn infarct_config(seed: u64) -> PhantomConfig {
        PhantomConfig {
            class: Class::Infarct,
            hypo_sector: Some(HypoSector {
                start: 0.5,
                width: std::f64::consts::PI,
                reduction: 0.1,
            }),
            ..base_config(seed)
        }
    }

    #[test]
    fn zero_amplitude_zero_noise_gives_identical_frames() {
        let config = PhantomConfig {
            amplitude: 0.0,
            ..base_config(3)
        };
        let phantom = generate_phantom(&config).unwrap();
        let first = phantom.video.frame_slice(0).to_vec();
        for t in 1..config.frames {
            assert_eq!(phantom.video.frame_slice(t), &first[..], "frame {t}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let config = PhantomConfig {
            noise_std: 0.03,
            interior_speckle: true,
            ..base_config(17)
        };
        let a = generate_phantom(&config).unwrap();
        let b = generate_phantom(&config).unwrap();
        assert_eq!(a.video.data(), b.video.data());
    }

    #[test]
    fn analytic_mask_contains_every_wall_pixel() {
        // Frame-sweep oracle: every pixel that deviates from the background
        // on any frame must fall inside the ground-truth rectangle.
        for config in [base_config(5), infarct_config(6)] {
            let phantom = generate_phantom(&config).unwrap();
            let rect = phantom.mask_rect;
            for t in 0..config.frames {
                let frame = phantom.video.frame_slice(t);
                for r in 0..config.frame_h {
                    for c in 0..config.frame_w {
                        let v = frame[r * config.frame_w + c] as f64;
                        if (v - BACKGROUND).abs() > 1e-6 {
                            assert!(
                                r >= rect.top
                                    && r < rect.top + rect.height
                                    && c >= rect.left
                                    && c < rect.left + rect.width,
                                "pixel ({r},{c}) outside mask at frame {t}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn infarct_sector_has_lower_wall_motion_variance() {
        let normal = generate_phantom(&base_config(9)).unwrap();
        let infarct = generate_phantom(&infarct_config(9)).unwrap();
        let config = infarct_config(9);
        let sector = config.hypo_sector.unwrap();
        let variance_in_sector = |video: &VideoClip| -> f64 {
            let frames = video.frames();
            let mut total = 0.0f64;
            for r in 0..config.frame_h {
                for c in 0..config.frame_w {
                    let dy = r as f64 - config.center.0;
                    let dx = c as f64 - config.center.1;
                    let rel =
                        (dy.atan2(dx) - sector.start).rem_euclid(std::f64::consts::TAU);
                    if rel >= sector.width {
                        continue;
                    }
                    let mut sum = 0.0f64;
                    let mut sum_sq = 0.0f64;
                    for t in 0..frames {
                        let v = video.frame_slice(t)[r * config.frame_w + c] as f64;
                        sum += v;
                        sum_sq += v * v;
                    }
                    let mean = sum / frames as f64;
                    total += sum_sq / frames as f64 - mean * mean;
                }
            }
            total
        };
        let v_normal = variance_in_sector(&normal.video);
        let v_infarct = variance_in_sector(&infarct.video);
        assert!(
            v_infarct < v_normal,
            "infarct sector variance {v_infarct} not below normal {v_normal}"
        );
    }

    #[test]
    fn chamber_exceeding_frame_is_rejected() {
        let config = PhantomConfig {
            center: (20.0, 150.0),
            ..base_config(1)
        };
        assert!(generate_phantom(&config).is_err());
    }

    #[test]
    fn class_sector_consistency_is_enforced() {
        let mut config = base_config(1);
        config.class = Class::Infarct;
        assert!(config.validate().is_err());
        let mut config = infarct_config(1);
        config.class = Class::Normal;
        assert!(config.validate().is_err());
    }
}
