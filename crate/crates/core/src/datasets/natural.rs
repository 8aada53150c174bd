use std::path::{Path, PathBuf};

use ndarray::s;

use crate::raster::{read_gray, resize_bilinear};
use crate::sensing::{SceneImage, SCENE_SIZE};
use crate::{Error, Result};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else if p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| super::IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(p);
        }
    }
    Ok(())
}

/// First `limit` images under `root` in lexicographic path order, centre
/// cropped to a square, converted to luminance and resized to 64×64.
pub fn load_natural_pretrain(root: &Path, limit: usize) -> Result<Vec<SceneImage>> {
    if !root.is_dir() {
        return Err(Error::Ingestion { offenders: vec![(root.to_path_buf(), "missing directory".into())] });
    }
    let mut files = Vec::new();
    collect(root, &mut files)?;
    if files.len() < limit {
        return Err(Error::Ingestion {
            offenders: vec![(root.to_path_buf(), format!("found {} images, need {limit}", files.len()))],
        });
    }
    files.truncate(limit);
    let mut offenders = Vec::new();
    let mut out = Vec::with_capacity(limit);
    for f in files {
        match read_gray(&f) {
            Ok(g) => {
                let (h, w) = g.dim();
                let side = h.min(w);
                let (r0, c0) = ((h - side) / 2, (w - side) / 2);
                let sq = g.slice(s![r0..r0 + side, c0..c0 + side]);
                out.push(SceneImage::clamped(resize_bilinear(sq, (SCENE_SIZE, SCENE_SIZE))));
            }
            Err(e) => offenders.push((f, e.to_string())),
        }
    }
    if !offenders.is_empty() {
        return Err(Error::Ingestion { offenders });
    }
    Ok(out)
}
