//! Single-pixel forward model.
//!
//! A measurement is the total intensity of the scene after elementwise
//! modulation by one pattern: `S_i = Σ_{x,y} I(x,y)·G_i(x,y)`. This module owns
//! the pattern banks that play the role of the sensing matrix rows, the
//! noiseless simulation of that sum, detector noise, and pattern export.

pub mod export;
pub mod hadamard;
mod noise;

use ndarray::{Array2, ArrayView2, NdFloat};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::digest::FloatHasher;
use crate::network::EncoderWeights;
use crate::{seeds, Error, Result};

pub use hadamard::{make_hadamard_patterns, HadamardOrdering};
pub use noise::{apply_noise, NoiseModel};

/// Scene edge length used throughout the default configuration.
pub const SCENE_SIZE: usize = 64;

/// One modulation pattern `G_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    pub index: usize,
    pub values: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Hadamard,
    Learned,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Hadamard => "hadamard",
            Strategy::Learned => "learned",
        }
    }
}

/// Ordered, immutable collection of equally sized patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternBank {
    patterns: Vec<Pattern>,
    strategy: Strategy,
    seed: u64,
    dims: (usize, usize),
}

impl PatternBank {
    /// Builds a bank from raw pattern arrays, assigning contiguous indices.
    pub fn new(patterns: Vec<Array2<f64>>, strategy: Strategy, seed: u64) -> Result<Self> {
        let first = patterns
            .first()
            .ok_or_else(|| Error::Domain("pattern bank needs at least one pattern".into()))?;
        let dims = first.dim();
        for (i, p) in patterns.iter().enumerate() {
            if p.dim() != dims {
                return Err(Error::Shape(format!(
                    "pattern {i} has dims {:?}, bank dims are {dims:?}",
                    p.dim()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("pattern {i} has non-finite entries")));
            }
        }
        let patterns = patterns
            .into_iter()
            .enumerate()
            .map(|(index, values)| Pattern { index, values })
            .collect();
        Ok(Self { patterns, strategy, seed, dims })
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    /// Bank flattened to an `N × (H·W)` sensing matrix, rows in bank order.
    pub fn to_matrix(&self) -> Array2<f64> {
        let (h, w) = self.dims;
        let mut a = Array2::zeros((self.len(), h * w));
        for (mut row, p) in a.rows_mut().into_iter().zip(&self.patterns) {
            row.assign(&ndarray::aview1(p.values.as_standard_layout().as_slice().unwrap()));
        }
        a
    }

    /// Content digest over dims and pattern values (bit-exact). Used as the
    /// bank identifier carried by measurement vectors and manifests.
    pub fn digest(&self) -> String {
        let mut h = FloatHasher::new();
        h.tag("pattern-bank").usize(self.dims.0).usize(self.dims.1).usize(self.len());
        for p in &self.patterns {
            h.f64s(p.values.iter());
        }
        h.finish()
    }
}

/// Grayscale scene with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneImage {
    pixels: Array2<f64>,
}

impl SceneImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Shape("scene has no pixels".into()));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("scene intensity {v} outside [0, 1]")));
        }
        Ok(Self { pixels })
    }

    /// Clamps into `[0, 1]` (NaN becomes 0) instead of rejecting.
    pub fn clamped(mut pixels: Array2<f64>) -> Self {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Self { pixels }
    }

    pub fn pixels(&self) -> ArrayView2<'_, f64> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }
}

/// Which input domain a measurement vector lives in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementDomain {
    /// Same units as the simulated forward model.
    #[default]
    Raw,
    /// Per-index standardized with the training statistics of a checkpoint.
    Standardized,
}

/// One coupled detector value per pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub bank_id: Option<String>,
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub domain: MeasurementDomain,
}

impl MeasurementVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self { values, bank_id: None, noise: None, domain: MeasurementDomain::Raw }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of patterns for a sampling ratio: `max(1, floor(ratio · pixels))`.
pub fn sampling_count(ratio: f64, pixels: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("sampling ratio {ratio} outside (0, 1]")));
    }
    if pixels == 0 {
        return Err(Error::Domain("pixel count must be positive".into()));
    }
    Ok(((ratio * pixels as f64).floor() as usize).clamp(1, pixels))
}

/// I.i.d. uniform `[0, 1)` patterns, deterministic in `seed`.
pub fn make_random_patterns(count: usize, dims: (usize, usize), seed: u64) -> Result<PatternBank> {
    if count == 0 {
        return Err(Error::Domain("pattern count must be at least 1".into()));
    }
    if dims.0 == 0 || dims.1 == 0 {
        return Err(Error::Shape(format!("invalid pattern dims {dims:?}")));
    }
    let mut rng = seeds::rng(seed, "random-patterns", 0);
    let patterns = (0..count)
        .map(|_| Array2::from_shape_fn(dims, |_| rng.random::<f64>()))
        .collect();
    PatternBank::new(patterns, Strategy::Random, seed)
}

/// `values[i] = Σ I ⊙ G_i`, summed in row-major order so the result is
/// bit-reproducible, then `noise` applied.
pub fn simulate_measurements(
    scene: &SceneImage,
    bank: &PatternBank,
    noise: &NoiseModel,
) -> Result<MeasurementVector> {
    let clean = simulate_clean(scene.pixels(), bank)?;
    let mut m = apply_noise(&MeasurementVector::raw(clean), noise)?;
    m.bank_id = Some(bank.digest());
    Ok(m)
}

/// Noiseless forward model on an arbitrary real-valued image.
pub fn simulate_clean(image: ArrayView2<'_, f64>, bank: &PatternBank) -> Result<Vec<f64>> {
    if image.dim() != bank.dims() {
        return Err(Error::Shape(format!(
            "scene dims {:?} do not match bank dims {:?}",
            image.dim(),
            bank.dims()
        )));
    }
    let image = image.as_standard_layout();
    let pixels = image.as_slice().expect("standard layout");
    Ok(bank
        .patterns()
        .iter()
        .map(|p| {
            let g = p.values.as_slice().expect("patterns are contiguous");
            pixels.iter().zip(g).fold(0.0, |acc, (i, g)| acc + i * g)
        })
        .collect())
}

/// Snapshot of learned encoder filters as a pattern bank; pattern `i` is
/// filter `i` converted exactly to `f64`.
pub fn patterns_from_encoder<T: NdFloat>(weights: &EncoderWeights<T>) -> Result<PatternBank> {
    let filters = weights.filters();
    let patterns = filters
        .outer_iter()
        .map(|f| f.mapv(|v| v.to_f64().expect("float converts to f64")))
        .collect();
    PatternBank::new(patterns, Strategy::Learned, 0)
}
