use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transform::{Affine, Mirror};
use super::{paired_files, Counts, DatasetManifest, LabeledSample, PreparedDataset};
use crate::network::{wbc_class_names, SegmentationMap};
use crate::raster::{read_gray, read_gray_u8, resize_bilinear, resize_nearest};
use crate::sensing::{SceneImage, SCENE_SIZE};
use crate::{seeds, Error, Result};

/// Gray level to class: black background, gray cytoplasm, white nucleus.
/// Thresholds sit at the midpoints between 0, 128 and 255.
pub fn decode_wbc_label(gray: u8) -> u8 {
    match gray {
        0..=63 => 0,
        64..=191 => 1,
        _ => 2,
    }
}

/// Loads every image/label pair under `root`, resized to 64×64.
pub fn load_wbc(root: &Path) -> Result<Vec<LabeledSample>> {
    let pairs = paired_files(root)?;
    let mut offenders = Vec::new();
    let mut out = Vec::with_capacity(pairs.len());
    for (stem, img_path, lbl_path) in pairs {
        let img = match read_gray(&img_path) {
            Ok(i) => i,
            Err(e) => {
                offenders.push((img_path, e.to_string()));
                continue;
            }
        };
        let lbl = match read_gray_u8(&lbl_path) {
            Ok(l) => l,
            Err(e) => {
                offenders.push((lbl_path, e.to_string()));
                continue;
            }
        };
        if img.dim() != lbl.dim() {
            offenders.push((lbl_path, format!("label is {:?}, image is {:?}", lbl.dim(), img.dim())));
            continue;
        }
        if img.nrows() < 2 || img.ncols() < 2 {
            offenders.push((img_path, format!("image too small: {:?}", img.dim())));
            continue;
        }
        let scene = resize_bilinear(img.view(), (SCENE_SIZE, SCENE_SIZE));
        let labels = resize_nearest(lbl.mapv(decode_wbc_label).view(), (SCENE_SIZE, SCENE_SIZE));
        out.push(LabeledSample {
            scene: SceneImage::clamped(scene),
            labels: SegmentationMap { labels, n_classes: 3 },
            source_id: stem,
            augmentation_tag: "raw".into(),
        });
    }
    if !offenders.is_empty() {
        return Err(Error::Ingestion { offenders });
    }
    Ok(out)
}

fn transformed(s: &LabeledSample, scene: Array2<f64>, labels: Array2<u8>, tag: String) -> LabeledSample {
    LabeledSample {
        scene: SceneImage::clamped(scene),
        labels: SegmentationMap { labels, n_classes: s.labels.n_classes },
        source_id: s.source_id.clone(),
        augmentation_tag: tag,
    }
}

pub const ROTATION_DEG: f64 = 50.0;

/// Draws the random affine variant for augmented sample `index`.
pub fn random_affine(seed: u64, index: usize, size: usize) -> Affine {
    let mut rng = seeds::rng(seed, "wbc-affine", index as u64);
    let shift = 0.1 * size as f64;
    Affine {
        rotation_deg: rng.random_range(-15.0..=15.0),
        scale: rng.random_range(0.9..=1.1),
        translation: (rng.random_range(-shift..=shift), rng.random_range(-shift..=shift)),
    }
}

/// Mirror stage (×4) then original + random affine + fixed 50° rotation (×3).
/// Labels get the same geometry with nearest sampling and background fill.
pub fn augment_wbc(raw: &[LabeledSample], seed: u64) -> Vec<LabeledSample> {
    let mirrored: Vec<LabeledSample> = raw
        .iter()
        .flat_map(|s| {
            Mirror::ALL.iter().map(move |m| {
                transformed(s, m.apply(&s.scene.pixels().to_owned()), m.apply(&s.labels.labels), m.tag().to_string())
            })
        })
        .collect();
    let mut out = Vec::with_capacity(mirrored.len() * 3);
    for (i, s) in mirrored.into_iter().enumerate() {
        let pixels = s.scene.pixels().to_owned();
        let size = pixels.nrows();
        let affine = random_affine(seed, i, size);
        let rot = Affine::rotation(ROTATION_DEG);
        let a = transformed(
            &s,
            affine.warp_bilinear(&pixels),
            affine.warp_nearest(&s.labels.labels, 0),
            format!("{}+affine", s.augmentation_tag),
        );
        let r = transformed(
            &s,
            rot.warp_bilinear(&pixels),
            rot.warp_nearest(&s.labels.labels, 0),
            format!("{}+rot50", s.augmentation_tag),
        );
        let tag = format!("{}+orig", s.augmentation_tag);
        out.push(LabeledSample { augmentation_tag: tag, ..s });
        out.push(a);
        out.push(r);
    }
    out
}

/// Seeded random partition into `train_count` training and the rest test.
pub fn split<T: Clone>(samples: &[T], train_count: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if train_count > samples.len() {
        return Err(Error::Domain(format!(
            "cannot take {train_count} training samples from {}",
            samples.len()
        )));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut seeds::rng(seed, "split", 0));
    let train = idx[..train_count].iter().map(|&i| samples[i].clone()).collect();
    let test = idx[train_count..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WbcOptions {
    /// Use the first quarter of the raw images (75 → 300 → 900, split 675/225).
    pub quarter: bool,
    pub seed: u64,
}

/// Raw → augmented → split, with a manifest recording every count.
pub fn prepare_wbc(root: &Path, opts: &WbcOptions) -> Result<PreparedDataset> {
    let mut raw = load_wbc(root)?;
    if opts.quarter {
        raw.truncate(raw.len() / 4);
    }
    if raw.is_empty() {
        return Err(Error::Ingestion { offenders: vec![(root.to_path_buf(), "no samples".into())] });
    }
    let augmented = augment_wbc(&raw, opts.seed);
    let train_count = augmented.len() * 3 / 4;
    let (train, test) = split(&augmented, train_count, opts.seed)?;
    let manifest = DatasetManifest {
        name: if opts.quarter { "wbc-quarter".into() } else { "wbc".into() },
        class_names: wbc_class_names(),
        counts: Counts { raw: raw.len(), augmented: augmented.len(), train: train.len(), test: test.len() },
        split_seed: opts.seed,
        provenance: vec![format!("root: {}", root.display())],
    };
    Ok(PreparedDataset { manifest, train, test })
}
