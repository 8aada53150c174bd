//! Small raster utilities: grayscale conversion, resampling and PNG I/O.

use std::path::Path;

use image::{DynamicImage, GrayImage};
use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Decodes any supported image file into luminance in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)?;
    Ok(to_gray(&img))
}

/// Decodes an image into 8-bit gray levels without luminance weighting of
/// palette-encoded labels (label files are expected to be gray already).
pub fn read_gray_u8(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)?;
    let g = to_gray(&img);
    Ok(g.mapv(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8))
}

pub fn to_gray(img: &DynamicImage) -> Array2<f64> {
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let mut out = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in rgb.enumerate_pixels() {
        let [r, g, b] = p.0;
        out[[y as usize, x as usize]] =
            (LUMA[0] * r as f64 + LUMA[1] * g as f64 + LUMA[2] * b as f64).clamp(0.0, 1.0);
    }
    out
}

pub fn write_gray_png(values: &Array2<u8>, path: &Path) -> Result<()> {
    let (h, w) = values.dim();
    let buf: Vec<u8> = values.iter().copied().collect();
    let img = GrayImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::Shape("image buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

/// Intensity image in `[0, 1]` to 8-bit PNG.
pub fn write_unit_png(values: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    write_gray_png(&values.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8), path)
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize_bilinear(src: ArrayView2<'_, f64>, out: (usize, usize)) -> Array2<f64> {
    let (h, w) = src.dim();
    let sy = h as f64 / out.0 as f64;
    let sx = w as f64 / out.1 as f64;
    Array2::from_shape_fn(out, |(r, c)| {
        let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Nearest-neighbour resampling; never invents values absent from `src`.
pub fn resize_nearest<T: Copy>(src: ArrayView2<'_, T>, out: (usize, usize)) -> Array2<T> {
    let (h, w) = src.dim();
    Array2::from_shape_fn(out, |(r, c)| {
        let y = (((r as f64 + 0.5) * h as f64 / out.0 as f64) as usize).min(h - 1);
        let x = (((c as f64 + 0.5) * w as f64 / out.1 as f64) as usize).min(w - 1);
        src[[y, x]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use ndarray::array;

    #[test]
    fn luminance_of_primaries() {
        let mut img = RgbImage::new(3, 1);
        img.put_pixel(0, 0, Rgb([255, 0, 0]));
        img.put_pixel(1, 0, Rgb([0, 255, 0]));
        img.put_pixel(2, 0, Rgb([0, 0, 255]));
        let g = to_gray(&DynamicImage::ImageRgb8(img));
        for (got, want) in g.iter().zip(LUMA) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let a = array![[0.1, 0.2], [0.3, 0.4]];
        assert_eq!(resize_bilinear(a.view(), (2, 2)), a);
        let c = Array2::from_elem((120, 120), 0.7);
        assert!(resize_bilinear(c.view(), (64, 64)).iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn nearest_keeps_label_set() {
        let labels = Array2::from_shape_fn((120, 120), |(r, c)| ((r / 40 + c / 40) % 3) as u8);
        let small = resize_nearest(labels.view(), (64, 64));
        assert!(small.iter().all(|&v| v < 3));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let v = Array2::from_shape_fn((5, 7), |(r, c)| (r * 7 + c) as u8 * 3);
        write_gray_png(&v, &p).unwrap();
        assert_eq!(read_gray_u8(&p).unwrap(), v);
    }
}
