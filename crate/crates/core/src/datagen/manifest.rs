//! Dataset manifests: per-video configs, labels, ground-truth rectangles and
//! leak-free video-level splits (80/20 train/test, validation carved from the
//! training side, 5 folds over the training videos).

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::echo::{read_video, write_video};
use crate::datagen::{generate_phantom, HypoSector, PhantomConfig};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::rng::derive_seed;
use crate::video::{Class, VideoClip};
use crate::windowing::BBox;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: usize,
    /// Path relative to the manifest directory.
    pub path: String,
    pub class: Class,
    /// Ground-truth rectangle (video-level, diastole-maximal).
    pub mask: BBox,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub split: Split,
    /// Cross-validation fold over the training partition; test videos carry none.
    pub fold: Option<usize>,
    pub config: PhantomConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub folds: usize,
    pub videos: Vec<VideoEntry>,
}

/// Knobs for synthesizing a dataset. The defaults generate well-separated
/// ("easy") phantoms at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_videos: usize,
    /// Fraction of videos labelled MI.
    pub class_ratio: f64,
    pub seed: u64,
    pub frames: usize,
    pub cycle_frames: usize,
    pub frame_h_range: (usize, usize),
    pub frame_w_range: (usize, usize),
    pub axis_r_range: (f64, f64),
    pub axis_c_range: (f64, f64),
    pub wall_thickness: f64,
    pub amplitude: f64,
    pub reduction: f64,
    pub sector_width: f64,
    pub noise_std: f64,
    pub wall_blur: bool,
    pub interior_speckle: bool,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub folds: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_videos: 40,
            class_ratio: 0.5,
            seed: 0,
            frames: 25,
            cycle_frames: 25,
            frame_h_range: (256, 288),
            frame_w_range: (300, 340),
            axis_r_range: (54.0, 66.0),
            axis_c_range: (44.0, 54.0),
            wall_thickness: 6.0,
            amplitude: 0.35,
            reduction: 0.1,
            sector_width: std::f64::consts::PI,
            noise_std: 0.01,
            wall_blur: false,
            interior_speckle: false,
            test_fraction: 0.2,
            val_fraction: 0.2,
            folds: 5,
        }
    }
}

fn round_count(total: usize, fraction: f64) -> usize {
    (total as f64 * fraction).round() as usize
}

fn sample_range_f64(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

fn sample_range_usize(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

fn phantom_config_for(config: &DatasetConfig, id: usize, class: Class) -> PhantomConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, id as u64));
    let frame_h = sample_range_usize(&mut rng, config.frame_h_range);
    let frame_w = sample_range_usize(&mut rng, config.frame_w_range);
    let axis_r = sample_range_f64(&mut rng, config.axis_r_range);
    let axis_c = sample_range_f64(&mut rng, config.axis_c_range);
    let jitter_r: f64 = rng.random_range(-8.0..8.0);
    let jitter_c: f64 = rng.random_range(-8.0..8.0);
    let sector_start: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let phantom_seed: u64 = rng.random();
    PhantomConfig {
        frame_h,
        frame_w,
        frames: config.frames,
        cycle_frames: config.cycle_frames,
        center: (frame_h as f64 / 2.0 + jitter_r, frame_w as f64 / 2.0 + jitter_c),
        axes: (axis_r, axis_c),
        wall_thickness: config.wall_thickness,
        amplitude: config.amplitude,
        class,
        hypo_sector: match class {
            Class::Infarct => Some(HypoSector {
                start: sector_start,
                width: config.sector_width,
                reduction: config.reduction,
            }),
            Class::Normal => None,
        },
        noise_std: config.noise_std,
        wall_blur: config.wall_blur,
        interior_speckle: config.interior_speckle,
        seed: phantom_seed,
    }
}

/// Assigns splits and folds per class so class counts per split differ by at
/// most one video, then generates and writes every phantom plus the manifest.
pub fn build_dataset(dir: &Path, config: &DatasetConfig) -> Result<DatasetManifest> {
    if config.n_videos < 10 {
        return Err(Error::InvalidArgument(
            "dataset needs at least 10 videos".into(),
        ));
    }
    if config.folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let n_mi = round_count(config.n_videos, config.class_ratio);
    let n_normal = config.n_videos - n_mi;

    // Classes interleave by id so neighbouring ids balance.
    let mut classes = Vec::with_capacity(config.n_videos);
    let (mut mi_left, mut n_left) = (n_mi, n_normal);
    for _ in 0..config.n_videos {
        if mi_left >= n_left && mi_left > 0 {
            classes.push(Class::Infarct);
            mi_left -= 1;
        } else {
            classes.push(Class::Normal);
            n_left -= 1;
        }
    }

    // Split each class independently: 20% test, 20% of the rest validation,
    // folds interleaved over all non-test videos.
    let mut split_of = vec![Split::Train; config.n_videos];
    let mut fold_of: Vec<Option<usize>> = vec![None; config.n_videos];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xC1A5));
    for class in [Class::Infarct, Class::Normal] {
        let mut ids: Vec<usize> = (0..config.n_videos)
            .filter(|&i| classes[i] == class)
            .collect();
        ids.shuffle(&mut rng);
        let n_test = round_count(ids.len(), config.test_fraction);
        let n_train = ids.len() - n_test;
        if n_test == 0 || n_train < config.folds {
            return Err(Error::InvalidArgument(format!(
                "infeasible balance: class {class} has {} videos for {} folds + test",
                ids.len(),
                config.folds
            )));
        }
        let n_val = round_count(n_train, config.val_fraction);
        for (rank, &id) in ids.iter().enumerate() {
            if rank < n_test {
                split_of[id] = Split::Test;
            } else {
                split_of[id] = if rank - n_test < n_val {
                    Split::Val
                } else {
                    Split::Train
                };
                fold_of[id] = Some((rank - n_test) % config.folds);
            }
        }
    }

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut videos = Vec::with_capacity(config.n_videos);
    for (id, &class) in classes.iter().enumerate() {
        let phantom_config = phantom_config_for(config, id, class);
        let phantom = generate_phantom(&phantom_config)?;
        let file = format!("video_{id:04}.echo");
        write_video(&dir.join(&file), &phantom.video)?;
        videos.push(VideoEntry {
            id,
            path: file,
            class,
            mask: phantom.mask_rect,
            frames: phantom_config.frames,
            height: phantom_config.frame_h,
            width: phantom_config.frame_w,
            split: split_of[id],
            fold: fold_of[id],
            config: phantom_config,
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: config.seed,
        folds: config.folds,
        videos,
    };
    write_manifest(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_vec_pretty(manifest)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    atomic_write(path, &json)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::format(
            "manifest",
            format!("unsupported schema version {}", manifest.schema_version),
        ));
    }
    Ok(manifest)
}

/// Re-renders every video of a manifest into `dir`. Output is byte-identical
/// to the original generation because each entry carries its full config.
pub fn regenerate(manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for entry in &manifest.videos {
        let phantom = generate_phantom(&entry.config)?;
        write_video(&dir.join(&entry.path), &phantom.video)?;
    }
    Ok(())
}

/// Loads a manifest entry's video with its label attached.
pub fn load_video(dir: &Path, entry: &VideoEntry) -> Result<VideoClip> {
    let path: PathBuf = dir.join(&entry.path);
    Ok(read_video(&path)?.with_label(Some(entry.class)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_config(seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_videos: 20,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn paper_scale_split_arithmetic() {
        // 165 videos at ratio 0.5 -> 132 train (incl. validation) / 33 test.
        let config = DatasetConfig {
            n_videos: 165,
            seed: 4,
            ..Default::default()
        };
        // Only exercise the split logic; skip rendering by reusing the
        // assignment code through build_dataset on a temp dir would render
        // 165 videos, so compute the counts directly instead.
        let n_mi = round_count(165, 0.5);
        let n_normal = 165 - n_mi;
        let test = round_count(n_mi, config.test_fraction) + round_count(n_normal, config.test_fraction);
        assert_eq!(test, 33);
        assert_eq!(165 - test, 132);
    }

    #[test]
    fn splits_partition_and_balance() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_dataset(dir.path(), &small_config(7)).unwrap();
        assert_eq!(manifest.videos.len(), 20);

        let count = |split: Split, class: Class| {
            manifest
                .videos
                .iter()
                .filter(|v| v.split == split && v.class == class)
                .count()
        };
        for split in [Split::Train, Split::Val, Split::Test] {
            let mi = count(split, Class::Infarct);
            let n = count(split, Class::Normal);
            assert!(mi.abs_diff(n) <= 1, "{split:?}: {mi} MI vs {n} N");
        }

        // Folds partition the non-test videos; test videos carry no fold.
        let mut fold_members: Vec<HashSet<usize>> = vec![HashSet::new(); manifest.folds];
        for v in &manifest.videos {
            match (v.split, v.fold) {
                (Split::Test, None) => {}
                (Split::Test, Some(_)) => panic!("test video with a fold"),
                (_, Some(f)) => {
                    fold_members[f].insert(v.id);
                }
                (_, None) => panic!("training video without a fold"),
            }
        }
        let total: usize = fold_members.iter().map(|s| s.len()).sum();
        let non_test = manifest
            .videos
            .iter()
            .filter(|v| v.split != Split::Test)
            .count();
        assert_eq!(total, non_test);
        for (i, a) in fold_members.iter().enumerate() {
            for b in &fold_members[i + 1..] {
                assert!(a.is_disjoint(b));
            }
        }
    }

    #[test]
    fn manifest_round_trip_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = build_dataset(dir.path(), &small_config(11)).unwrap();
        let loaded = read_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded.videos.len(), manifest.videos.len());

        // Regenerating from the manifest reproduces byte-identical files.
        let redo = tempfile::tempdir().unwrap();
        regenerate(&loaded, redo.path()).unwrap();
        for entry in &loaded.videos {
            let a = std::fs::read(dir.path().join(&entry.path)).unwrap();
            let b = std::fs::read(redo.path().join(&entry.path)).unwrap();
            assert_eq!(a, b, "{}", entry.path);
        }
    }

    #[test]
    fn too_few_videos_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = DatasetConfig {
            n_videos: 5,
            ..Default::default()
        };
        assert!(build_dataset(dir.path(), &config).is_err());
    }
}
