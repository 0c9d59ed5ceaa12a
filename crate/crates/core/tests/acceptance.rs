//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! 1. Exact detector parameter counts (57,977 / 68,345 / 74,105).
//! 2. Detector w=5 shape trace ending in flatten length 864.
//! 3. Finite-difference gradient checks for every layer type and the full
//!    detector (10 seeds, 64-bit, h = 1e-5, max rel err <= 1e-4).
//! 4. Windowing laws: cut/reconstruct identity, 422x636 -> 40 windows,
//!    temporal count and delta laws.
//! 5. Optimized vs naive-loop convolution equivalence (50 random cases).
//! 6. Metrics unit suite.
//! 7. Desk-scale end-to-end training thresholds (in `acceptance_e2e.rs`).
//! 8. Bitwise-deterministic training.
//! 9. ECHO / MDLW byte-exact round-trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use echopipe_core::datagen::echo::{decode_video, encode_video};
use echopipe_core::datagen::{generate_phantom, rect_mask, HypoSector, PhantomConfig};
use echopipe_core::eval::{classification_metrics, seg_accuracy, train_segmenter, SegSample, TrainConfig};
use echopipe_core::models::{
    build_detector, build_segmenter_with, detector_input_shape, detector_layers, SegFilters,
};
use echopipe_core::nn::{
    bce, count_parameters, encode_model, gradcheck, mse, Activation, GradCheckConfig, LayerSpec,
    LossKind, Model, Padding, PoolMode,
};
use echopipe_core::tensor::{Shape, Tensor};
use echopipe_core::video::{Class, VideoClip};
use echopipe_core::windowing::{reconstruct, spatial_windows, SpatialGrid, TemporalGrid};

fn shape(dims: &[usize]) -> Shape {
    Shape::new(dims.to_vec()).unwrap()
}

// ---------------------------------------------------------------------------
// Criterion 1: parameter-count oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_parameter_counts() {
    for (w, expected) in [(5usize, 57_977u64), (7, 68_345), (9, 74_105)] {
        let layers = detector_layers(w).unwrap();
        let input = detector_input_shape(w, 236, 183).unwrap();
        let counted = count_parameters(&layers, &input).unwrap();
        assert_eq!(counted, expected, "detector window {w}");
        // Cross-check the law against materialized parameters.
        let model: Model<f32> = build_detector(w, 0).unwrap();
        assert_eq!(model.params().total_len() as u64, expected);
    }
    println!("criterion 1 (parameter counts 57977/68345/74105): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 2: shape-trace oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_shape_trace() {
    let model: Model<f32> = build_detector(5, 0).unwrap();
    let dims: Vec<Vec<usize>> = model
        .shape_trace()
        .iter()
        .map(|s| s.dims().to_vec())
        .collect();
    // Derived trace: out = in - k + 1 per conv axis, floor(in/2) per pooled
    // spatial axis, depth pooled by 1.
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
    assert_eq!(12 * 9 * 1 * 8, 864);
    println!("criterion 2 (w=5 shape trace, flatten 864): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient checks.
// ---------------------------------------------------------------------------

fn random_target(out_shape: &Shape, seed: u64) -> Tensor<f64> {
    Tensor::random_uniform(out_shape.clone(), 1.0, seed)
}

fn check_layers(
    name: &str,
    layers: Vec<LayerSpec>,
    input_shape: Shape,
    loss: LossKind,
    tolerance: f64,
    seeds: std::ops::Range<u64>,
) {
    use rayon::prelude::*;
    seeds.collect::<Vec<_>>().par_iter().for_each(|&seed| {
        let model: Model<f64> = Model::new(layers.clone(), input_shape.clone(), seed).unwrap();
        let input = Tensor::random_uniform(input_shape.clone(), 1.0, seed.wrapping_add(101));
        let target = match loss {
            LossKind::Mse => random_target(model.output_shape(), seed.wrapping_add(202)),
            LossKind::Bce => Tensor::from_vec(shape(&[1]), vec![(seed % 2) as f64]).unwrap(),
        };
        let report = gradcheck(
            &model,
            loss,
            &input,
            &target,
            GradCheckConfig {
                tolerance,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            report.pass,
            "{name} seed {seed} failed:\n{}",
            report.summary()
        );
    });
}

#[test]
fn criterion_3_gradient_checks() {
    let conv2d = |padding, stride, activation| LayerSpec::Conv2d {
        filters: 4,
        kernel: (3, 3),
        stride,
        padding,
        activation,
    };

    check_layers(
        "conv2d valid relu",
        vec![conv2d(Padding::None, (1, 1), Activation::Relu)],
        shape(&[8, 8, 2]),
        LossKind::Mse,
        1e-5,
        0..10,
    );
    check_layers(
        "conv2d preserve sigmoid",
        vec![conv2d(Padding::Preserve, (1, 1), Activation::Sigmoid)],
        shape(&[7, 7, 1]),
        LossKind::Mse,
        1e-4,
        0..10,
    );
    check_layers(
        "conv2d stride 2",
        vec![conv2d(Padding::None, (2, 2), Activation::None)],
        shape(&[9, 9, 2]),
        LossKind::Mse,
        1e-4,
        0..10,
    );
    check_layers(
        "conv3d valid relu",
        vec![LayerSpec::Conv3d {
            filters: 4,
            kernel: (3, 3, 2),
            padding: Padding::None,
            activation: Activation::Relu,
        }],
        shape(&[8, 7, 5, 2]),
        LossKind::Mse,
        1e-4,
        0..10,
    );
    check_layers(
        "transpose_conv2d relu",
        vec![LayerSpec::TransposeConv2d {
            filters: 4,
            kernel: (3, 3),
            stride: (2, 2),
            activation: Activation::Relu,
        }],
        shape(&[5, 6, 3]),
        LossKind::Mse,
        1e-5,
        0..10,
    );
    check_layers(
        "conv2d + maxpool2d floor",
        vec![
            conv2d(Padding::None, (1, 1), Activation::None),
            LayerSpec::MaxPool2d {
                pool: (2, 2),
                mode: PoolMode::Floor,
            },
        ],
        shape(&[8, 8, 2]),
        LossKind::Mse,
        1e-4,
        0..10,
    );
    check_layers(
        "conv2d + maxpool2d ceil",
        vec![
            conv2d(Padding::Preserve, (1, 1), Activation::None),
            LayerSpec::MaxPool2d {
                pool: (2, 2),
                mode: PoolMode::Ceil,
            },
        ],
        shape(&[7, 7, 1]),
        LossKind::Mse,
        1e-4,
        0..10,
    );
    check_layers(
        "conv3d + maxpool3d floor",
        vec![
            LayerSpec::Conv3d {
                filters: 3,
                kernel: (3, 3, 2),
                padding: Padding::None,
                activation: Activation::None,
            },
            LayerSpec::MaxPool3d {
                pool: (2, 2, 1),
                mode: PoolMode::Floor,
            },
        ],
        shape(&[7, 7, 4, 2]),
        LossKind::Mse,
        1e-4,
        0..10,
    );
    check_layers(
        "flatten + dense chain",
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
        shape(&[4, 3]),
        LossKind::Bce,
        1e-4,
        0..10,
    );
    check_layers(
        "standalone activations",
        vec![
            LayerSpec::Dense {
                units: 6,
                activation: Activation::None,
            },
            LayerSpec::Activation {
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 3,
                activation: Activation::None,
            },
            LayerSpec::Activation {
                activation: Activation::Sigmoid,
            },
        ],
        shape(&[4]),
        LossKind::Mse,
        1e-4,
        0..10,
    );

    // Full w=5 detector. The four (2,2,1) pool stages need at least a 46x46
    // plane to keep every extent >= 1, so the toy input is (46,46,5,1): the
    // smallest plane the real architecture accepts.
    {
        use rayon::prelude::*;
        (0..10u64).collect::<Vec<_>>().par_iter().for_each(|&seed| {
            let model: Model<f64> =
                echopipe_core::models::build_detector_at(5, 46, 46, seed).unwrap();
            let input = Tensor::random_uniform(shape(&[46, 46, 5, 1]), 1.0, seed + 31);
            let target = Tensor::from_vec(shape(&[1]), vec![(seed % 2) as f64]).unwrap();
            let report = gradcheck(
                &model,
                LossKind::Bce,
                &input,
                &target,
                GradCheckConfig {
                    tolerance: 1e-4,
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(
                report.pass,
                "full detector seed {seed} failed:\n{}",
                report.summary()
            );
        });
    }

    // Reduced-depth 3D model at the (20,20,5,1) toy size (the full four-pool
    // chain cannot pool a 20 px plane below one element).
    check_layers(
        "reduced 3d chain at (20,20,5,1)",
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
        shape(&[20, 20, 5, 1]),
        LossKind::Bce,
        1e-4,
        0..10,
    );

    println!("criterion 3 (gradient checks, 10 seeds, <=1e-4): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 4: windowing laws.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_windowing_laws() {
    // (a) Cut-then-reconstruct identity on 200 random binary masks, exact.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let h = rng.random_range(150..400);
        let w = rng.random_range(150..400);
        let data: Vec<f32> = (0..h * w)
            .map(|_| if rng.random::<f32>() < 0.3 { 1.0 } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(shape(&[h, w]), data).unwrap();
        let grid = SpatialGrid::new(h, w, 150, 75).unwrap();
        let windows = spatial_windows(&mask, &grid).unwrap();
        let back = reconstruct(&windows, &grid, h, w).unwrap();
        assert_eq!(back, mask, "case {case} ({h}x{w})");
    }

    // (b) Spatial window count for 422x636 equals 40 by the enumeration
    // oracle: anchors at multiples of the stride plus a final dim-win anchor.
    let enumerate = |dim: usize, win: usize, stride: usize| -> Vec<usize> {
        let mut anchors = Vec::new();
        let mut a = 0;
        while a + win <= dim {
            anchors.push(a);
            a += stride;
        }
        if *anchors.last().unwrap() != dim - win {
            anchors.push(dim - win);
        }
        anchors
    };
    let rows = enumerate(422, 150, 75);
    let cols = enumerate(636, 150, 75);
    assert_eq!(rows.len() * cols.len(), 40);
    let grid = SpatialGrid::new(422, 636, 150, 75).unwrap();
    assert_eq!(grid.count(), 40);
    assert_eq!(grid.row_anchors(), &rows[..]);
    assert_eq!(grid.col_anchors(), &cols[..]);

    // (c) Temporal count law: Σ(f_i − w + 1) matches the emitted windows, and
    // count(w) − count(w+2) = 2 × videos. With 165 videos totalling 3501
    // frames these are exactly the reference counts 2841/2511/2181.
    let frame_counts: Vec<usize> = (0..165).map(|i| if i < 129 { 21 } else { 22 }).collect();
    assert_eq!(frame_counts.iter().sum::<usize>(), 3501);
    let total = |w: usize| -> usize {
        frame_counts
            .iter()
            .map(|&f| TemporalGrid::new(f, w).unwrap().count())
            .sum()
    };
    assert_eq!(total(5), 2841);
    assert_eq!(total(7), 2511);
    assert_eq!(total(9), 2181);
    assert_eq!(total(5) - total(7), 2 * 165);
    assert_eq!(total(7) - total(9), 2 * 165);

    // The law holds on actual emitted windows too, not just the formula.
    let mut emitted = 0usize;
    let mut sum_law = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..12 {
        let frames = rng.random_range(9..30);
        let clip_frames: Vec<Tensor<f32>> = (0..frames)
            .map(|t| Tensor::fill(shape(&[6, 6]), t as f32 / frames as f32))
            .collect();
        let video = VideoClip::from_frames(clip_frames, None).unwrap();
        emitted += echopipe_core::windowing::temporal_windows(&video, 5)
            .unwrap()
            .len();
        sum_law += frames - 5 + 1;
    }
    assert_eq!(emitted, sum_law);

    println!("criterion 4 (windowing laws a/b/c): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 5: convolution equivalence against naive loops.
// ---------------------------------------------------------------------------

/// Independent oracle: direct nested-loop 2D cross-correlation plus bias.
#[allow(clippy::too_many_arguments)]
fn naive_conv2d(
    input: &[f32],
    (h, w, c): (usize, usize, usize),
    weight: &[f32],
    bias: &[f32],
    (kh, kw): (usize, usize),
    filters: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    out: (usize, usize),
) -> Vec<f32> {
    let mut result = vec![0.0f32; out.0 * out.1 * filters];
    for oi in 0..out.0 {
        for oj in 0..out.1 {
            for f in 0..filters {
                let mut acc = bias[f];
                for u in 0..kh {
                    for v in 0..kw {
                        let r = (oi * stride.0 + u) as isize - pad.0 as isize;
                        let cc = (oj * stride.1 + v) as isize - pad.1 as isize;
                        if r < 0 || r >= h as isize || cc < 0 || cc >= w as isize {
                            continue;
                        }
                        for ch in 0..c {
                            let x = input[((r as usize) * w + cc as usize) * c + ch];
                            let k = weight[((u * kw + v) * c + ch) * filters + f];
                            acc += x * k;
                        }
                    }
                }
                result[(oi * out.1 + oj) * filters + f] = acc;
            }
        }
    }
    result
}

/// Independent oracle: direct nested-loop 3D cross-correlation plus bias.
fn naive_conv3d(
    input: &[f32],
    (h, w, d, c): (usize, usize, usize, usize),
    weight: &[f32],
    bias: &[f32],
    (kh, kw, kd): (usize, usize, usize),
    filters: usize,
    out: (usize, usize, usize),
) -> Vec<f32> {
    let mut result = vec![0.0f32; out.0 * out.1 * out.2 * filters];
    for oi in 0..out.0 {
        for oj in 0..out.1 {
            for od in 0..out.2 {
                for f in 0..filters {
                    let mut acc = bias[f];
                    for u in 0..kh {
                        for v in 0..kw {
                            for t in 0..kd {
                                for ch in 0..c {
                                    let x = input
                                        [(((oi + u) * w + (oj + v)) * d + (od + t)) * c + ch];
                                    let k = weight
                                        [(((u * kw + v) * kd + t) * c + ch) * filters + f];
                                    acc += x * k;
                                }
                            }
                        }
                    }
                    result[((oi * out.1 + oj) * out.2 + od) * filters + f] = acc;
                }
            }
        }
    }
    result
}

#[test]
fn criterion_5_convolution_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f32;
    for case in 0..25 {
        // conv2d, mixed padding and stride.
        let h = rng.random_range(6..24);
        let w = rng.random_range(6..24);
        let c = rng.random_range(1..5);
        let filters = rng.random_range(1..5);
        let k = [1usize, 3, 5][rng.random_range(0..3)];
        let preserve = k % 2 == 1 && rng.random::<bool>();
        let stride = if preserve {
            (1, 1)
        } else {
            (rng.random_range(1..3), rng.random_range(1..3))
        };
        if k > h || k > w {
            continue;
        }
        let layers = vec![LayerSpec::Conv2d {
            filters,
            kernel: (k, k),
            stride,
            padding: if preserve {
                Padding::Preserve
            } else {
                Padding::None
            },
            activation: Activation::None,
        }];
        let model: Model<f32> = Model::new(layers, shape(&[h, w, c]), case).unwrap();
        let input = Tensor::random_uniform(shape(&[h, w, c]), 1.0, case + 500);
        let fast = model.forward(&input).unwrap();
        let out_dims = fast.dims();
        let pad = if preserve { ((k - 1) / 2, (k - 1) / 2) } else { (0, 0) };
        let block = &model.params().blocks()[0];
        let naive = naive_conv2d(
            input.data(),
            (h, w, c),
            block.weight.data(),
            block.bias.data(),
            (k, k),
            filters,
            stride,
            pad,
            (out_dims[0], out_dims[1]),
        );
        for (a, b) in fast.data().iter().zip(&naive) {
            worst = worst.max((a - b).abs());
        }
    }
    for case in 0..25 {
        // conv3d, valid padding, sizes up to (32,32,9,4).
        let h = rng.random_range(8..33);
        let w = rng.random_range(8..33);
        let d = rng.random_range(3..10);
        let c = rng.random_range(1..5);
        let filters = rng.random_range(1..5);
        let kd = rng.random_range(1..=d.min(3));
        let layers = vec![LayerSpec::Conv3d {
            filters,
            kernel: (3, 3, kd),
            padding: Padding::None,
            activation: Activation::None,
        }];
        let model: Model<f32> = Model::new(layers, shape(&[h, w, d, c]), case).unwrap();
        let input = Tensor::random_uniform(shape(&[h, w, d, c]), 1.0, case + 900);
        let fast = model.forward(&input).unwrap();
        let out_dims = fast.dims();
        let block = &model.params().blocks()[0];
        let naive = naive_conv3d(
            input.data(),
            (h, w, d, c),
            block.weight.data(),
            block.bias.data(),
            (3, 3, kd),
            filters,
            (out_dims[0], out_dims[1], out_dims[2]),
        );
        for (a, b) in fast.data().iter().zip(&naive) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-5, "max abs diff {worst}");
    println!("criterion 5 (optimized vs naive conv, max abs diff {worst:.2e}): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 6: metrics unit suite.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_metrics() {
    // Eq. 1: MSE examples.
    let w = Tensor::from_vec(shape(&[2, 2]), vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(mse(&w, &w).unwrap(), 0.0);
    let ones = Tensor::fill(shape(&[2, 2]), 1.0f64);
    let zeros = Tensor::zeros(shape(&[2, 2]));
    assert_eq!(mse(&ones, &zeros).unwrap(), 1.0);
    let what = Tensor::from_vec(shape(&[2, 2]), vec![1.0f64, 1.0, 0.0, 0.0]).unwrap();
    assert_eq!(mse(&w, &what).unwrap(), 0.5);

    // Eq. 2: accuracy = 1 − MSE.
    assert_eq!(seg_accuracy(&w, &w).unwrap(), 1.0);
    let inverted = Tensor::from_vec(shape(&[2, 2]), vec![0.0f64, 1.0, 1.0, 0.0]).unwrap();
    assert_eq!(seg_accuracy(&w, &inverted).unwrap(), 0.0);

    // Binary cross-entropy values.
    assert!((bce(1.0f64, 0.5) - std::f64::consts::LN_2).abs() < 1e-9);
    assert!((bce(0.0f64, 0.9) - 2.302585).abs() < 1e-5);
    assert!(bce(1.0f64, 1.0 - 1e-7) < 1.1e-7);

    // Eq. 3 on the reported best-fold region: TP=18, FP=0, FN=1.
    let mut truth = vec![Class::Infarct; 19];
    truth.extend(vec![Class::Normal; 14]);
    let mut predicted = vec![Class::Infarct; 18];
    predicted.push(Class::Normal);
    predicted.extend(vec![Class::Normal; 14]);
    let m = classification_metrics(&truth, &predicted).unwrap();
    assert_eq!(m.precision, 1.0);
    assert!((m.recall - 0.947368).abs() < 1e-4);
    assert!((m.f1 - 0.972).abs() <= 5e-3, "F1 {}", m.f1);

    println!("criterion 6 (Eq. 1-3 metrics suite): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 8: bitwise-deterministic training.
// ---------------------------------------------------------------------------

fn phantom_for_determinism(seed: u64) -> (VideoClip, echopipe_core::windowing::BBox) {
    let config = PhantomConfig {
        frame_h: 256,
        frame_w: 300,
        frames: 25,
        cycle_frames: 25,
        center: (128.0, 150.0),
        axes: (60.0, 48.0),
        wall_thickness: 6.0,
        amplitude: 0.3,
        class: Class::Infarct,
        hypo_sector: Some(HypoSector {
            start: 1.0,
            width: std::f64::consts::PI,
            reduction: 0.1,
        }),
        noise_std: 0.02,
        wall_blur: false,
        interior_speckle: false,
        seed,
    };
    let phantom = generate_phantom(&config).unwrap();
    (phantom.video, phantom.mask_rect)
}

#[test]
fn criterion_8_training_determinism() {
    let run = || {
        let (video, rect) = phantom_for_determinism(11);
        let grid = SpatialGrid::new(video.height(), video.width(), 150, 75).unwrap();
        let mask_frame = rect_mask(video.height(), video.width(), &rect);
        let mask_windows = spatial_windows(&mask_frame, &grid).unwrap();
        let window_shape = shape(&[150, 150, 1]);
        let mut samples = Vec::new();
        for f in [0usize, 12] {
            for (w, m) in spatial_windows(&video.frame(f), &grid)
                .unwrap()
                .into_iter()
                .zip(&mask_windows)
            {
                samples.push(SegSample {
                    window: w.into_reshaped(window_shape.clone()).unwrap(),
                    mask: m.clone().into_reshaped(window_shape.clone()).unwrap(),
                });
            }
        }
        let mut model = build_segmenter_with(
            &SegFilters {
                encoder: [4, 4, 8],
                decoder: [4, 4, 4],
            },
            21,
        )
        .unwrap();
        let config = TrainConfig {
            epochs: 2,
            batch: 8,
            seed: 33,
            ..Default::default()
        };
        train_segmenter(&mut model, &samples, &[], &config).unwrap();
        encode_model(&model).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first, second, "weight files differ between identical runs");
    println!("criterion 8 (bitwise-deterministic 2-epoch training): PASS");
}

// ---------------------------------------------------------------------------
// Criterion 9: format round-trips.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_format_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..20u64 {
        // ECHO: random clip, write -> read -> write byte-identical.
        let frames = rng.random_range(1..6);
        let h = rng.random_range(2..40);
        let w = rng.random_range(2..40);
        let data: Vec<f32> = (0..frames * h * w).map(|_| rng.random::<f32>()).collect();
        let video = VideoClip::new(
            Tensor::from_vec(shape(&[frames, h, w]), data).unwrap(),
            None,
        )
        .unwrap();
        let bytes = encode_video(&video);
        let decoded = decode_video(&bytes).unwrap();
        assert_eq!(encode_video(&decoded), bytes, "ECHO case {case}");

        // MDLW: random small model, write -> read -> write byte-identical.
        let units = rng.random_range(1..5);
        let inputs = rng.random_range(1..7);
        let layers = vec![
            LayerSpec::Dense {
                units,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ];
        let model: Model<f32> = Model::new(layers, shape(&[inputs]), case).unwrap();
        let bytes = encode_model(&model).unwrap();
        let loaded: Model<f32> = echopipe_core::nn::decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&loaded).unwrap(), bytes, "MDLW case {case}");
    }
    println!("criterion 9 (ECHO/MDLW round-trips, 20 cases): PASS");
}
