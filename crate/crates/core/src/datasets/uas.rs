use std::path::Path;

use crate::network::SegmentationMap;
use crate::raster::{read_gray, read_gray_u8, resize_bilinear, resize_nearest};
use crate::sensing::{SceneImage, SCENE_SIZE};
use crate::{Error, Result};

use super::{paired_files, Counts, DatasetManifest, LabeledSample, PreparedDataset};

fn load_split(root: &Path) -> Result<Vec<LabeledSample>> {
    let mut offenders = Vec::new();
    let mut out = Vec::new();
    for (stem, img_path, lbl_path) in paired_files(root)? {
        let pair = read_gray(&img_path).and_then(|i| Ok((i, read_gray_u8(&lbl_path)?)));
        match pair {
            Ok((img, lbl)) if img.dim() == lbl.dim() && img.nrows() >= 2 && img.ncols() >= 2 => {
                let labels = resize_nearest(lbl.mapv(|g| u8::from(g >= 128)).view(), (SCENE_SIZE, SCENE_SIZE));
                out.push(LabeledSample {
                    scene: SceneImage::clamped(resize_bilinear(img.view(), (SCENE_SIZE, SCENE_SIZE))),
                    labels: SegmentationMap { labels, n_classes: 2 },
                    source_id: stem,
                    augmentation_tag: "raw".into(),
                });
            }
            Ok((img, lbl)) => offenders.push((lbl_path, format!("label {:?} vs image {:?}", lbl.dim(), img.dim()))),
            Err(e) => offenders.push((img_path, e.to_string())),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Ingestion { offenders });
    }
    Ok(out)
}

/// Road scenes with binary passable/impassable labels from
/// `root/{train,test}/{images,labels}`. The corpus is optional; a missing
/// root is reported as [`Error::DatasetUnavailable`].
pub fn load_uas(root: &Path) -> Result<PreparedDataset> {
    if !root.is_dir() {
        return Err(Error::DatasetUnavailable(format!("UAS corpus not found at {}", root.display())));
    }
    let train = load_split(&root.join("train"))?;
    let test = load_split(&root.join("test"))?;
    let manifest = DatasetManifest {
        name: "uas".into(),
        class_names: vec!["impassable".into(), "passable".into()],
        counts: Counts { raw: train.len() + test.len(), augmented: train.len() + test.len(), train: train.len(), test: test.len() },
        split_seed: 0,
        provenance: vec![format!("root: {}", root.display())],
    };
    Ok(PreparedDataset { manifest, train, test })
}
