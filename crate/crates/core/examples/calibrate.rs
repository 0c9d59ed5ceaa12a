// Temporary calibration harness for the desk-scale end-to-end thresholds.
// Run: cargo run -p echopipe-core --release --example calibrate

use std::time::Instant;

use echopipe_core::datagen::{build_dataset, DatasetConfig, Split};
use echopipe_core::eval::{
    det_videos_from_manifest, seg_samples_from_manifest, train_detector_cv, train_segmenter,
    TrainConfig,
};
use echopipe_core::models::{build_segmenter_with, SegFilters};
use echopipe_core::nn::{LossKind, RmsPropConfig};

fn main() {

    let t0 = Instant::now();
    let dir = std::env::temp_dir().join("echopipe_calibrate");
    let _ = std::fs::remove_dir_all(&dir);
    let config = DatasetConfig {
        n_videos: 40,
        seed: 7,
        amplitude: 0.25,
        frame_h_range: (288, 320),
        frame_w_range: (340, 370),
        axis_r_range: (50.0, 62.0),
        axis_c_range: (42.0, 52.0),
        ..Default::default()
    };
    let manifest = build_dataset(&dir, &config).unwrap();
    println!("dataset: {:.1}s", t0.elapsed().as_secs_f64());

    // ---- segmenter ----
    let t1 = Instant::now();
    let train =
        seg_samples_from_manifest(&manifest, &dir, Split::Train, Some(2), 150, 75).unwrap();
    let val = seg_samples_from_manifest(&manifest, &dir, Split::Val, Some(2), 150, 75).unwrap();
    println!("seg samples: {} train / {} val ({:.1}s)", train.len(), val.len(), t1.elapsed().as_secs_f64());

    let filters = SegFilters {
        encoder: [8, 16, 32],
        decoder: [16, 8, 8],
    };
    let mut seg = build_segmenter_with::<f32>(&filters, 42).unwrap();
    let t2 = Instant::now();
    let outcome = train_segmenter(
        &mut seg,
        &train,
        &val,
        &TrainConfig {
            epochs: 20,
            batch: 8,
            seed: 42,
            optimizer: RmsPropConfig {
                learning_rate: 2e-3,
                ..Default::default()
            },
        },
    )
    .unwrap();
    println!(
        "seg train: {:.1}s; best epoch {} val acc {:?}",
        t2.elapsed().as_secs_f64(),
        outcome.best_epoch,
        outcome.best_val_accuracy
    );
    for e in &outcome.curves {
        println!(
            "  epoch {:2}: train {:.5} val acc {:.4}",
            e.epoch,
            e.train_loss,
            e.val_accuracy.unwrap_or(f64::NAN)
        );
    }

    // Held-out accuracy on the test split.
    let t3 = Instant::now();
    let test = seg_samples_from_manifest(&manifest, &dir, Split::Test, Some(4), 150, 75).unwrap();
    let acc: f64 = test
        .iter()
        .map(|s| {
            let out = seg.forward(&s.window).unwrap();
            1.0 - LossKind::Mse.value(&out, &s.mask).unwrap() as f64
        })
        .sum::<f64>()
        / test.len() as f64;
    println!(
        "seg held-out accuracy over {} windows: {:.4} ({:.1}s)",
        test.len(),
        acc,
        t3.elapsed().as_secs_f64()
    );

    // ---- detector ----
    let t4 = Instant::now();
    let det_input = (59usize, 46usize);
    let det_videos = det_videos_from_manifest(&manifest, &dir, det_input, 5).unwrap();
    println!(
        "det videos: {} ({} windows each; {:.1}s)",
        det_videos.len(),
        det_videos[0].windows.len(),
        t4.elapsed().as_secs_f64()
    );
    let t5 = Instant::now();
    let cv = train_detector_cv(
        &det_videos,
        5,
        det_input,
        manifest.folds,
        &TrainConfig {
            epochs: 12,
            batch: 8,
            seed: 42,
            optimizer: RmsPropConfig::default(),
        },
    )
    .unwrap();
    println!("det cv: {:.1}s", t5.elapsed().as_secs_f64());
    for f in &cv.folds {
        println!(
            "  fold {}: acc {:.3} P {:.3} R {:.3} F1 {:.3} (loss {:.4} -> {:.4})",
            f.fold,
            f.metrics.accuracy,
            f.metrics.precision,
            f.metrics.recall,
            f.metrics.f1,
            f.loss_curve.first().unwrap(),
            f.loss_curve.last().unwrap()
        );
    }
    println!(
        "mean per-video accuracy: {:.4} (min {:.3} max {:.3})",
        cv.summary.accuracy.mean, cv.summary.accuracy.min, cv.summary.accuracy.max
    );
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
