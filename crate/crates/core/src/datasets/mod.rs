//! Dataset ingestion, augmentation and splits.
//!
//! Root layout for labelled corpora:
//!
//! ```text
//! root/
//!   images/<stem>.png|bmp|jpg
//!   labels/<stem>.png|bmp|jpg
//! ```
//!
//! Prepared splits are cached in a binary container (see [`PreparedDataset`]).

mod natural;
pub mod synthetic;
pub mod transform;
mod uas;
mod wbc;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::network::SegmentationMap;
use crate::sensing::SceneImage;
use crate::{Error, Result};

pub use natural::load_natural_pretrain;
pub use uas::load_uas;
pub use wbc::{augment_wbc, decode_wbc_label, load_wbc, prepare_wbc, split, WbcOptions};

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "bmp", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub scene: SceneImage,
    pub labels: SegmentationMap,
    pub source_id: String,
    pub augmentation_tag: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub raw: usize,
    pub augmented: usize,
    pub train: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub counts: Counts,
    pub split_seed: u64,
    pub provenance: Vec<String>,
}

impl DatasetManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// A split dataset ready for training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub manifest: DatasetManifest,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

const CACHE_MAGIC: &[u8; 8] = b"SPISEGDS";
pub const CACHE_VERSION: u32 = 1;
/// Refuse caches claiming more pixels than this (guards hostile headers).
const MAX_CACHE_PIXELS: u64 = 1 << 32;

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    manifest: DatasetManifest,
    dims: (usize, usize),
    n_classes: usize,
    train: Vec<(String, String)>,
    test: Vec<(String, String)>,
}

impl PreparedDataset {
    pub fn n_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    /// Serializes into the cache container: JSON header, then per sample the
    /// scene as `f64` LE followed by the labels as bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let dims = self
            .train
            .iter()
            .chain(&self.test)
            .next()
            .map(|s| s.scene.dims())
            .unwrap_or((0, 0));
        let ids = |v: &[LabeledSample]| v.iter().map(|s| (s.source_id.clone(), s.augmentation_tag.clone())).collect();
        let header = CacheHeader {
            manifest: self.manifest.clone(),
            dims,
            n_classes: self.n_classes(),
            train: ids(&self.train),
            test: ids(&self.test),
        };
        let mut payload = Vec::new();
        for s in self.train.iter().chain(&self.test) {
            if s.scene.dims() != dims || s.labels.dims() != dims {
                return Err(Error::Shape("samples in one dataset must share dims".into()));
            }
            payload.extend(container::f64s_to_le(s.scene.pixels().iter().copied()));
            payload.extend(s.labels.labels.iter().copied());
        }
        Ok(container::encode(CACHE_MAGIC, CACHE_VERSION, &serde_json::to_vec(&header)?, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(bytes, CACHE_MAGIC, CACHE_VERSION)?;
        let header: CacheHeader = serde_json::from_slice(header)?;
        let (h, w) = header.dims;
        let pixels = (h as u64).saturating_mul(w as u64);
        let count = (header.train.len() + header.test.len()) as u64;
        if pixels.saturating_mul(count) > MAX_CACHE_PIXELS {
            return Err(Error::Checkpoint("dataset cache header claims an implausible size".into()));
        }
        let per = pixels as usize * 9;
        if payload.len() as u64 != count * per as u64 {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                count * per as u64
            )));
        }
        if header.n_classes == 0 || header.n_classes > 256 || header.manifest.class_names.len() != header.n_classes {
            return Err(Error::Checkpoint("inconsistent class count".into()));
        }
        let mut chunks = payload.chunks_exact(per.max(1));
        let mut take = |ids: Vec<(String, String)>| -> Result<Vec<LabeledSample>> {
            ids.into_iter()
                .map(|(source_id, augmentation_tag)| {
                    let chunk = chunks.next().expect("length checked");
                    let (scene_bytes, label_bytes) = chunk.split_at(pixels as usize * 8);
                    let scene = Array2::from_shape_vec((h, w), container::le_to_f64s(scene_bytes)?)
                        .map_err(|e| Error::Checkpoint(e.to_string()))?;
                    let labels = Array2::from_shape_vec((h, w), label_bytes.to_vec())
                        .map_err(|e| Error::Checkpoint(e.to_string()))?;
                    Ok(LabeledSample {
                        scene: SceneImage::new(scene).map_err(|e| Error::Checkpoint(e.to_string()))?,
                        labels: SegmentationMap::new(labels, header.n_classes)
                            .map_err(|e| Error::Checkpoint(e.to_string()))?,
                        source_id,
                        augmentation_tag,
                    })
                })
                .collect()
        };
        let train = take(header.train)?;
        let test = take(header.test)?;
        Ok(Self { manifest: header.manifest, train, test })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Image files directly inside `dir`, sorted lexicographically.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem_map(files: Vec<PathBuf>) -> BTreeMap<String, PathBuf> {
    files
        .into_iter()
        .filter_map(|p| Some((p.file_stem()?.to_str()?.to_string(), p)))
        .collect()
}

/// Pairs `images/` and `labels/` by file stem, collecting every mismatch.
pub(crate) fn paired_files(root: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    for d in [&images_dir, &labels_dir] {
        if !d.is_dir() {
            return Err(Error::Ingestion { offenders: vec![(d.clone(), "missing directory".into())] });
        }
    }
    let images = stem_map(list_images(&images_dir)?);
    let mut labels = stem_map(list_images(&labels_dir)?);
    let mut offenders = Vec::new();
    let mut pairs = Vec::new();
    for (stem, img) in images {
        match labels.remove(&stem) {
            Some(lbl) => pairs.push((stem, img, lbl)),
            None => offenders.push((img, "no matching label file".to_string())),
        }
    }
    offenders.extend(labels.into_values().map(|p| (p, "no matching image file".to_string())));
    if !offenders.is_empty() {
        return Err(Error::Ingestion { offenders });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests;
