//! Figure-style PNG grids: one row per sample, a scene column followed by one
//! column per label map, with a captioned header strip.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};

use crate::network::SegmentationMap;
use crate::raster::write_gray_png;
use crate::sensing::SceneImage;
use crate::{Error, Result};

pub const GLYPH_W: usize = 3;
pub const GLYPH_H: usize = 5;
const GAP: usize = 2;

/// 3×5 bitmaps, rows top to bottom.
fn glyph(c: char) -> Option<&'static str> {
    Some(match c.to_ascii_uppercase() {
        'A' => "010101111101101",
        'B' => "110101110101110",
        'C' => "011100100100011",
        'D' => "110101101101110",
        'E' => "111100110100111",
        'F' => "111100110100100",
        'G' => "011100101101011",
        'H' => "101101111101101",
        'I' => "111010010010111",
        'J' => "001001001101010",
        'K' => "101101110101101",
        'L' => "100100100100111",
        'M' => "101111111101101",
        'N' => "110101101101101",
        'O' => "010101101101010",
        'P' => "110101110100100",
        'Q' => "010101101110011",
        'R' => "110101110101101",
        'S' => "011100010001110",
        'T' => "111010010010010",
        'U' => "101101101101111",
        'V' => "101101101101010",
        'W' => "101101111111101",
        'X' => "101101010101101",
        'Y' => "101101010010010",
        'Z' => "111001010100111",
        '0' => "111101101101111",
        '1' => "010110010010111",
        '2' => "110001010100111",
        '3' => "110001010001110",
        '4' => "101101111001001",
        '5' => "111100110001110",
        '6' => "011100111101111",
        '7' => "111001010010010",
        '8' => "111101111101111",
        '9' => "111101111001110",
        '-' => "000000111000000",
        '.' => "000000000000010",
        '_' => "000000000000111",
        '+' => "000010111010000",
        '/' => "001001010100100",
        ':' => "000010000010000",
        ' ' => "000000000000000",
        _ => return None,
    })
}

/// Ink mask (255 on ink) for `text`; unknown characters render as blanks.
pub fn render_text(text: &str) -> Array2<u8> {
    let n = text.chars().count();
    let mut out = Array2::zeros((GLYPH_H, (n * (GLYPH_W + 1)).saturating_sub(1)));
    for (k, ch) in text.chars().enumerate() {
        let bits = glyph(ch).unwrap_or("000000000000000").as_bytes();
        for r in 0..GLYPH_H {
            for c in 0..GLYPH_W {
                if bits[r * GLYPH_W + c] == b'1' {
                    out[[r, k * (GLYPH_W + 1) + c]] = 255;
                }
            }
        }
    }
    out
}

/// Gray level of `class` out of `n_classes`, evenly spaced from black to
/// white (background black, cytoplasm gray, nucleus white for three classes).
pub fn class_gray(class: u8, n_classes: usize) -> u8 {
    let top = n_classes.saturating_sub(1).max(1) as f64;
    (255.0 * class as f64 / top).round() as u8
}

pub fn encode_palette(map: &SegmentationMap) -> Array2<u8> {
    let lut: Vec<u8> = (0..map.n_classes).map(|c| class_gray(c as u8, map.n_classes)).collect();
    map.labels.mapv(|l| lut[l as usize])
}

/// Inverse of [`encode_palette`]: every gray snaps to the nearest class level.
pub fn decode_palette(gray: &Array2<u8>, n_classes: usize) -> Result<SegmentationMap> {
    if !(1..=256).contains(&n_classes) {
        return Err(Error::Domain(format!("cannot decode {n_classes} classes")));
    }
    let levels: Vec<i32> = (0..n_classes).map(|c| class_gray(c as u8, n_classes) as i32).collect();
    let labels = gray.mapv(|g| {
        levels
            .iter()
            .enumerate()
            .min_by_key(|(_, &l)| (l - g as i32).abs())
            .map(|(i, _)| i as u8)
            .unwrap()
    });
    SegmentationMap::new(labels, n_classes)
}

pub struct PanelItem {
    pub scene: SceneImage,
    /// Ground truth first by convention, then one map per method.
    pub maps: Vec<SegmentationMap>,
}

/// Writes the grid to `path` and returns it; `None` (with a warning) when
/// there is nothing to draw.
pub fn emit_panels(items: &[PanelItem], headers: &[String], path: &Path) -> Result<Option<PathBuf>> {
    let Some(first) = items.first() else {
        log::warn!("no panel items; {} not written", path.display());
        return Ok(None);
    };
    let (h, w) = first.scene.dims();
    let cols = 1 + headers.len();
    for (i, it) in items.iter().enumerate() {
        if it.scene.dims() != (h, w) || it.maps.len() != headers.len() || it.maps.iter().any(|m| m.dims() != (h, w)) {
            return Err(Error::Shape(format!("panel item {i} does not match the first item's layout")));
        }
    }
    let strip = GLYPH_H + 2 * GAP;
    let height = strip + items.len() * (h + GAP);
    let width = cols * w + (cols + 1) * GAP;
    let mut canvas = Array2::from_elem((height, width), 96u8);
    let names: Vec<&str> = std::iter::once("scene").chain(headers.iter().map(String::as_str)).collect();
    for (j, name) in names.iter().enumerate() {
        let x0 = GAP + j * (w + GAP);
        let fit = (w + 1) / (GLYPH_W + 1);
        let text = render_text(&name.chars().take(fit).collect::<String>());
        let tw = text.ncols().min(w);
        let mut dst = canvas.slice_mut(s![GAP..GAP + GLYPH_H, x0..x0 + tw]);
        dst.zip_mut_with(&text.slice(s![.., ..tw]), |d, &t| {
            if t > 0 {
                *d = 255;
            }
        });
    }
    for (i, it) in items.iter().enumerate() {
        let y0 = strip + i * (h + GAP);
        let x0 = GAP;
        canvas
            .slice_mut(s![y0..y0 + h, x0..x0 + w])
            .assign(&it.scene.pixels().mapv(|v| (v * 255.0).round() as u8));
        for (k, m) in it.maps.iter().enumerate() {
            let x0 = GAP + (k + 1) * (w + GAP);
            canvas.slice_mut(s![y0..y0 + h, x0..x0 + w]).assign(&encode_palette(m));
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_gray_png(&canvas, path)?;
    Ok(Some(path.to_path_buf()))
}
