//! Procedural stand-in corpora written in the same on-disk layout as the real
//! ones, for machines without the original downloads.
//!
//! The blood-smear generator draws one leukocyte per frame: a pale textured
//! background with red-cell discs, a gray cytoplasm body with a wobbly outline
//! and a dark, one- to four-lobed nucleus. Natural-looking scenes are
//! compositions of shaded shapes, gratings and smooth clutter.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::{write_gray_png, write_unit_png};
use crate::{seeds, Result};

pub const WBC_RAW_SIZE: usize = 120;
pub const NATURAL_RAW_SIZE: usize = 96;

fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = img.dim();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let tmp = Array2::from_shape_fn((h, w), |(r, c)| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * img[[r, clampi(c as isize + i as isize - radius, w)]])
            .sum::<f64>()
            / norm
    });
    Array2::from_shape_fn((h, w), |(r, c)| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, k)| k * tmp[[clampi(r as isize + i as isize - radius, h), c]])
            .sum::<f64>()
            / norm
    })
}

/// Smooth random field in roughly `[-1, 1]`.
fn smooth_noise(rng: &mut ChaCha8Rng, dims: (usize, usize), sigma: f64) -> Array2<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    let white = Array2::from_shape_fn(dims, |_| n.sample(rng));
    let s = gaussian_blur(&white, sigma);
    let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    s / peak
}

/// Star-shaped blob: ellipse with a low-order radial perturbation.
struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    harmonics: Vec<(f64, f64)>,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, cy: f64, cx: f64, ry: f64, rx: f64, wobble: f64) -> Self {
        let harmonics = (2..=4).map(|_| (rng.random_range(-wobble..=wobble), rng.random_range(0.0..2.0 * PI))).collect();
        Self { cy, cx, ry, rx, angle: rng.random_range(0.0..PI), harmonics }
    }

    /// Normalized radius: `< 1` inside.
    fn rho(&self, r: f64, c: f64) -> f64 {
        let (dy, dx) = (r - self.cy, c - self.cx);
        let (s, co) = self.angle.sin_cos();
        let u = co * dx + s * dy;
        let v = -s * dx + co * dy;
        let theta = v.atan2(u);
        let bump: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, (a, ph))| a * ((k as f64 + 2.0) * theta + ph).cos())
            .sum();
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt() / (1.0 + bump)
    }
}

/// One synthetic smear: intensity image in `[0, 1]` and labels
/// (0 background, 1 cytoplasm, 2 nucleus).
pub fn wbc_sample(seed: u64, index: usize) -> (Array2<f64>, Array2<u8>) {
    let n = WBC_RAW_SIZE;
    let mut rng = seeds::rng(seed, "synthetic-wbc", index as u64);
    let dims = (n, n);
    let base = rng.random_range(0.72..0.86);
    let (gy, gx) = (rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let texture = smooth_noise(&mut rng, dims, 4.0);
    let mut img = Array2::from_shape_fn(dims, |(r, c)| {
        base + gy * (r as f64 / n as f64 - 0.5) + gx * (c as f64 / n as f64 - 0.5) + 0.03 * texture[[r, c]]
    });
    let mut labels = Array2::<u8>::zeros(dims);

    for _ in 0..rng.random_range(2..=6) {
        let rad = rng.random_range(11.0..17.0);
        let cy = rng.random_range(-10.0..n as f64 + 10.0);
        let cx = rng.random_range(-10.0..n as f64 + 10.0);
        let shade = base - rng.random_range(0.08..0.18);
        for ((r, c), v) in img.indexed_iter_mut() {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt() / rad;
            if d < 1.0 {
                // paler centre of a biconcave disc
                *v = shade + if d < 0.45 { 0.05 } else { 0.0 };
            }
        }
    }

    let centre = (n as f64 / 2.0 + rng.random_range(-12.0..12.0), n as f64 / 2.0 + rng.random_range(-12.0..12.0));
    let ra = rng.random_range(26.0..38.0);
    let rb = ra * rng.random_range(0.8..1.0);
    let cell = Blob::random(&mut rng, centre.0, centre.1, rb, ra, 0.06);
    let cyto_shade = rng.random_range(0.52..0.68);
    let cyto_tex = smooth_noise(&mut rng, dims, 2.0);

    let lobes = rng.random_range(1..=4);
    let nuclei: Vec<Blob> = (0..lobes)
        .map(|_| {
            let off = if lobes == 1 { 0.15 } else { 0.42 } * ra;
            let t = rng.random_range(0.0..2.0 * PI);
            let d = rng.random_range(0.0..=off);
            let rr = ra * rng.random_range(0.24..0.42) * if lobes == 1 { 1.4 } else { 1.0 };
            let ry = rr * rng.random_range(0.7..1.0);
            Blob::random(&mut rng, centre.0 + d * t.sin(), centre.1 + d * t.cos(), ry, rr, 0.08)
        })
        .collect();
    let nuc_shade = rng.random_range(0.2..0.38);

    for ((r, c), v) in img.indexed_iter_mut() {
        let (y, x) = (r as f64, c as f64);
        let rho = cell.rho(y, x);
        if rho < 1.0 {
            *v = cyto_shade + 0.04 * cyto_tex[[r, c]];
            labels[[r, c]] = 1;
            // nucleus stays clear of the membrane
            if rho < 0.85 && nuclei.iter().any(|b| b.rho(y, x) < 1.0) {
                *v = nuc_shade + 0.03 * cyto_tex[[r, c]];
                labels[[r, c]] = 2;
            }
        }
    }

    let blurred = gaussian_blur(&img, rng.random_range(0.6..1.4));
    let noise = Normal::new(0.0, 0.015).unwrap();
    let img = blurred.mapv(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0));
    (img, labels)
}

/// Writes `count` smears as `images/wbc_NNN.png` + `labels/wbc_NNN.png`
/// with label gray levels 0 / 128 / 255.
pub fn write_synthetic_wbc(root: &Path, count: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("labels"))?;
    for i in 0..count {
        let (img, lbl) = wbc_sample(seed, i);
        let name = format!("wbc_{i:03}.png");
        write_unit_png(img.view(), &root.join("images").join(&name))?;
        write_gray_png(&lbl.mapv(|l| [0u8, 128, 255][l as usize]), &root.join("labels").join(&name))?;
    }
    Ok(())
}

/// A cluttered grayscale scene of shaded shapes and gratings.
pub fn natural_sample(seed: u64, index: usize) -> Array2<f64> {
    let n = NATURAL_RAW_SIZE;
    let dims = (n, n);
    let mut rng = seeds::rng(seed, "synthetic-natural", index as u64);
    let (a, gy, gx) = (rng.random_range(0.2..0.8), rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
    let sigma = rng.random_range(2.0..8.0);
    let clutter = smooth_noise(&mut rng, dims, sigma);
    let amp = rng.random_range(0.05..0.25);
    let mut img = Array2::from_shape_fn(dims, |(r, c)| {
        a + gy * (r as f64 / n as f64 - 0.5) + gx * (c as f64 / n as f64 - 0.5) + amp * clutter[[r, c]]
    });
    for _ in 0..rng.random_range(3..=12) {
        let shade = rng.random_range(0.0..1.0);
        let cy = rng.random_range(0.0..n as f64);
        let cx = rng.random_range(0.0..n as f64);
        let size = rng.random_range(5.0..35.0);
        let kind = rng.random_range(0..3);
        let ry = size * rng.random_range(0.4..1.0);
        let blob = Blob::random(&mut rng, cy, cx, ry, size, 0.15);
        let (freq, phase, dir) = (rng.random_range(0.1..0.8), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..PI));
        let (ds, dc) = dir.sin_cos();
        for ((r, c), v) in img.indexed_iter_mut() {
            let (y, x) = (r as f64, c as f64);
            let inside = match kind {
                0 => blob.rho(y, x) < 1.0,
                _ => (y - cy).abs() < size * 0.6 && (x - cx).abs() < size,
            };
            if inside {
                *v = if kind == 2 {
                    shade + 0.25 * (freq * (dc * x + ds * y) + phase).sin()
                } else {
                    shade
                };
            }
        }
    }
    let blurred = gaussian_blur(&img, rng.random_range(0.0..1.5));
    let noise = Normal::new(0.0, 0.01).unwrap();
    blurred.mapv(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
}

/// Writes `count` scenes as `img_NNNNN.png`.
pub fn write_synthetic_natural(root: &Path, count: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(root)?;
    for i in 0..count {
        write_unit_png(natural_sample(seed, i).view(), &root.join(format!("img_{i:05}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smears_have_all_three_classes() {
        for i in 0..20 {
            let (img, lbl) = wbc_sample(7, i);
            assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
            for class in 0..3u8 {
                assert!(lbl.iter().any(|&l| l == class), "sample {i} lacks class {class}");
            }
        }
        assert_eq!(wbc_sample(7, 3), wbc_sample(7, 3));
    }

    #[test]
    fn nucleus_is_darker_than_cytoplasm() {
        let (img, lbl) = wbc_sample(1, 0);
        let mean = |k: u8| {
            let v: Vec<f64> = img.iter().zip(&lbl).filter(|(_, &l)| l == k).map(|(v, _)| *v).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(2) < mean(1) && mean(1) < mean(0));
    }

    #[test]
    fn natural_scenes_vary() {
        let a = natural_sample(1, 0);
        let b = natural_sample(1, 1);
        assert_ne!(a, b);
        let mean = a.sum() / a.len() as f64;
        let var = a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        assert!(var > 1e-4);
    }
}
