//! Concrete model builders: the 2D encoder-decoder segmenter and the three
//! 3D detectors, plus a parameter-count search over the segmenter family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, Model, Padding, PoolMode};
use crate::tensor::{Scalar, Shape};

/// Segmentation windows are 150x150 px with a 75 px stride (50% overlap).
pub const SEG_WINDOW: usize = 150;
pub const SEG_STRIDE: usize = 75;

/// The detector's reference input plane (rows, cols).
pub const DETECTOR_INPUT: (usize, usize) = (236, 183);

pub const DETECTOR_WINDOWS: [usize; 3] = [5, 7, 9];

/// Filter counts for the 2D encoder-decoder segmenter. The default is the
/// declared reference configuration; smaller configurations keep the same
/// topology for desk-scale training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegFilters {
    pub encoder: [usize; 3],
    pub decoder: [usize; 3],
}

impl Default for SegFilters {
    fn default() -> Self {
        SegFilters {
            encoder: [32, 64, 128],
            decoder: [64, 32, 16],
        }
    }
}

/// Segmenter layer chain: 3 x [3x3 preserve conv + relu, 2x2 ceil maxpool],
/// 3 x [3x3 stride-2 doubling transpose conv + relu], then an unpadded 3x3
/// conv with sigmoid. Spatial trace 150→75→38→19→38→76→152→150.
pub fn segmenter_layers(filters: &SegFilters, kernel: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(8);
    for &f in &filters.encoder {
        layers.push(LayerSpec::Conv2d {
            filters: f,
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: Padding::Preserve,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::MaxPool2d {
            pool: (2, 2),
            mode: PoolMode::Ceil,
        });
    }
    for &f in &filters.decoder {
        layers.push(LayerSpec::TransposeConv2d {
            filters: f,
            kernel: (kernel, kernel),
            stride: (2, 2),
            activation: Activation::Relu,
        });
    }
    layers.push(LayerSpec::Conv2d {
        filters: 1,
        kernel: (kernel, kernel),
        stride: (1, 1),
        padding: Padding::None,
        activation: Activation::Sigmoid,
    });
    layers
}

pub fn segmenter_input_shape() -> Shape {
    Shape::new(vec![SEG_WINDOW, SEG_WINDOW, 1]).expect("static shape")
}

/// Reference segmenter on 150x150x1 input.
pub fn build_segmenter<E: Scalar>(seed: u64) -> Result<Model<E>> {
    build_segmenter_with(&SegFilters::default(), seed)
}

pub fn build_segmenter_with<E: Scalar>(filters: &SegFilters, seed: u64) -> Result<Model<E>> {
    Model::new(segmenter_layers(filters, 3), segmenter_input_shape(), seed)
}

/// Per-layer 3D kernel sizes for a temporal window size, as (k_h, k_w, k_d).
pub fn detector_kernels(win_t: usize) -> Result<[(usize, usize, usize); 4]> {
    Ok(match win_t {
        5 => [(3, 3, 3), (3, 3, 2), (3, 3, 2), (3, 3, 1)],
        7 => [(3, 3, 3), (3, 3, 3), (3, 3, 2), (3, 3, 2)],
        9 => [(3, 3, 3), (3, 3, 3), (3, 3, 3), (3, 3, 3)],
        other => {
            return Err(Error::InvalidArgument(format!(
                "unsupported temporal window {other}; expected 5, 7 or 9"
            )))
        }
    })
}

const DETECTOR_FILTERS: [usize; 4] = [32, 32, 16, 8];

/// Detector layer chain: four unpadded conv3d blocks with (2,2,1) floor
/// pooling, then flatten and dense 32/16/1 with a sigmoid head.
pub fn detector_layers(win_t: usize) -> Result<Vec<LayerSpec>> {
    let kernels = detector_kernels(win_t)?;
    let mut layers = Vec::with_capacity(12);
    for (kernel, filters) in kernels.into_iter().zip(DETECTOR_FILTERS) {
        layers.push(LayerSpec::Conv3d {
            filters,
            kernel,
            padding: Padding::None,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::MaxPool3d {
            pool: (2, 2, 1),
            mode: PoolMode::Floor,
        });
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense {
        units: 32,
        activation: Activation::Relu,
    });
    layers.push(LayerSpec::Dense {
        units: 16,
        activation: Activation::Relu,
    });
    layers.push(LayerSpec::Dense {
        units: 1,
        activation: Activation::Sigmoid,
    });
    Ok(layers)
}

pub fn detector_input_shape(win_t: usize, rows: usize, cols: usize) -> Result<Shape> {
    Shape::new(vec![rows, cols, win_t, 1])
}

/// Detector at the reference 236x183 input plane.
pub fn build_detector<E: Scalar>(win_t: usize, seed: u64) -> Result<Model<E>> {
    build_detector_at(win_t, DETECTOR_INPUT.0, DETECTOR_INPUT.1, seed)
}

/// Detector on an arbitrary input plane (the dense sizes adapt through the
/// flatten width). Smaller planes suit desk-scale training.
pub fn build_detector_at<E: Scalar>(
    win_t: usize,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<Model<E>> {
    Model::new(
        detector_layers(win_t)?,
        detector_input_shape(win_t, rows, cols)?,
        seed,
    )
}

/// One match of [`arch_search`]: a kernel size and the six conv/transpose
/// filter counts (encoder 3, decoder 3) of the segmenter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArchMatch {
    pub kernel: usize,
    pub filters: [usize; 6],
}

impl ArchMatch {
    pub fn seg_filters(&self) -> SegFilters {
        SegFilters {
            encoder: [self.filters[0], self.filters[1], self.filters[2]],
            decoder: [self.filters[3], self.filters[4], self.filters[5]],
        }
    }
}

/// Parameter count of a segmenter-family configuration without materializing
/// it: a chain of 7 kernel² convolutions (6 filter slots + the 1-filter head)
/// over a single-channel input. Pooling and transposition do not change the
/// count, so this one formula covers the whole family.
fn family_count(kernel: u64, filters: &[u64; 6]) -> u64 {
    let k2 = kernel * kernel;
    let mut total = 0u64;
    let mut in_ch = 1u64;
    for &f in filters {
        total += f * (k2 * in_ch) + f;
        in_ch = f;
    }
    total + (k2 * in_ch) + 1
}

/// Enumerates every segmenter-family configuration (filters in {8,16,…,256},
/// kernel in {3,5}) whose exact trainable-parameter count equals `target`.
/// Monotonicity of the count in each filter slot prunes the search.
pub fn arch_search(target: u64) -> Vec<ArchMatch> {
    const STEP: u64 = 8;
    const MAX: u64 = 256;
    let mut matches = Vec::new();
    for kernel in [3u64, 5] {
        let k2 = kernel * kernel;
        let mut filters = [0u64; 6];
        // Depth-first over the first five slots; the sixth is solved exactly:
        // given f1..f5, count = prefix + f6·(k²·f5 + 1) + k²·f6 + 1.
        fn descend(
            kernel: u64,
            k2: u64,
            slot: usize,
            prefix: u64,
            in_ch: u64,
            filters: &mut [u64; 6],
            target: u64,
            matches: &mut Vec<ArchMatch>,
        ) {
            if slot == 5 {
                let denom = k2 * in_ch + 1 + k2;
                let remainder = match target.checked_sub(prefix + 1) {
                    Some(r) => r,
                    None => return,
                };
                if remainder % denom == 0 {
                    let f6 = remainder / denom;
                    if f6 >= STEP && f6 <= MAX && f6 % STEP == 0 {
                        filters[5] = f6;
                        matches.push(ArchMatch {
                            kernel: kernel as usize,
                            filters: filters.map(|f| f as usize),
                        });
                    }
                }
                return;
            }
            let mut f = STEP;
            while f <= MAX {
                let layer = f * (k2 * in_ch) + f;
                let next_prefix = prefix + layer;
                // Cheapest possible completion from here; counts grow with
                // every filter, so once it exceeds the target, stop.
                let mut tail = 0u64;
                let mut ch = f;
                for _ in slot + 1..6 {
                    tail += STEP * (k2 * ch) + STEP;
                    ch = STEP;
                }
                tail += k2 * ch + 1;
                if next_prefix + tail > target {
                    break;
                }
                filters[slot] = f;
                descend(kernel, k2, slot + 1, next_prefix, f, filters, target, matches);
                f += STEP;
            }
        }
        descend(kernel, k2, 0, 0, 1, &mut filters, target, &mut matches);
    }
    // Independent recount of every candidate; the pruned search must agree.
    matches.retain(|m| family_count(m.kernel as u64, &m.filters.map(|f| f as u64)) == target);
    matches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::count_parameters;
    use crate::tensor::Tensor;

    #[test]
    fn detector_parameter_counts_match_reference() {
        for (w, expected) in [(5usize, 57_977u64), (7, 68_345), (9, 74_105)] {
            let layers = detector_layers(w).unwrap();
            let input = detector_input_shape(w, 236, 183).unwrap();
            assert_eq!(count_parameters(&layers, &input).unwrap(), expected, "w={w}");
        }
    }

    #[test]
    fn detector_shape_trace_w5() {
        let model: Model<f32> = build_detector(5, 0).unwrap();
        let dims: Vec<Vec<usize>> = model
            .shape_trace()
            .iter()
            .map(|s| s.dims().to_vec())
            .collect();
        let expected: Vec<Vec<usize>> = vec![
            vec![236, 183, 5, 1],
            vec![234, 181, 3, 32],
            vec![117, 90, 3, 32],
            vec![115, 88, 2, 32],
            vec![57, 44, 2, 32],
            vec![55, 42, 1, 16],
            vec![27, 21, 1, 16],
            vec![25, 19, 1, 8],
            vec![12, 9, 1, 8],
            vec![864],
            vec![32],
            vec![16],
            vec![1],
        ];
        assert_eq!(dims, expected);
    }

    #[test]
    fn detector_flatten_is_864_for_every_window() {
        for w in DETECTOR_WINDOWS {
            let model: Model<f32> = build_detector(w, 0).unwrap();
            let flat = model
                .shape_trace()
                .iter()
                .find(|s| s.rank() == 1)
                .unwrap()
                .numel();
            assert_eq!(flat, 864, "w={w}");
        }
    }

    #[test]
    fn unsupported_window_is_rejected() {
        assert!(detector_layers(6).is_err());
        assert!(build_detector::<f32>(11, 0).is_err());
    }

    #[test]
    fn segmenter_spatial_trace_and_reference_count() {
        let model: Model<f32> = build_segmenter(1).unwrap();
        let dims: Vec<Vec<usize>> = model
            .shape_trace()
            .iter()
            .map(|s| s.dims().to_vec())
            .collect();
        let expected: Vec<Vec<usize>> = vec![
            vec![150, 150, 1],
            vec![150, 150, 32],
            vec![75, 75, 32],
            vec![75, 75, 64],
            vec![38, 38, 64],
            vec![38, 38, 128],
            vec![19, 19, 128],
            vec![38, 38, 64],
            vec![76, 76, 32],
            vec![152, 152, 16],
            vec![150, 150, 1],
        ];
        assert_eq!(dims, expected);
        assert_eq!(model.count_parameters(), 189_697);
    }

    #[test]
    fn segmenter_output_is_probability_mask() {
        // Small configuration so the forward pass stays cheap.
        let filters = SegFilters {
            encoder: [4, 4, 8],
            decoder: [4, 4, 4],
        };
        let model: Model<f32> = build_segmenter_with(&filters, 7).unwrap();
        let input = Tensor::zeros(segmenter_input_shape());
        let out = model.forward(&input).unwrap();
        assert_eq!(out.dims(), &[150, 150, 1]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn two_builds_same_seed_identical() {
        let a: Model<f32> = build_detector_at(5, 46, 46, 33).unwrap();
        let b: Model<f32> = build_detector_at(5, 46, 46, 33).unwrap();
        for (x, y) in a.params().blocks().iter().zip(b.params().blocks()) {
            assert_eq!(x.weight, y.weight);
            assert_eq!(x.bias, y.bias);
        }
    }

    #[test]
    fn family_count_matches_count_parameters() {
        let filters = SegFilters::default();
        let layers = segmenter_layers(&filters, 3);
        let by_trace = count_parameters(&layers, &segmenter_input_shape()).unwrap();
        let by_formula = family_count(3, &[32, 64, 128, 64, 32, 16]);
        assert_eq!(by_trace, by_formula);
        assert_eq!(by_formula, 189_697);
    }

    #[test]
    fn arch_search_recovers_reference_config() {
        let matches = arch_search(189_697);
        assert!(matches.contains(&ArchMatch {
            kernel: 3,
            filters: [32, 64, 128, 64, 32, 16],
        }));
        for m in &matches {
            assert_eq!(
                family_count(m.kernel as u64, &m.filters.map(|f| f as u64)),
                189_697
            );
        }
    }

    #[test]
    fn arch_search_impossible_target_is_empty() {
        assert!(arch_search(1).is_empty());
    }
}
