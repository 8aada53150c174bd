use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::MeasurementVector;
use crate::{seeds, Error, Result};

/// Detector noise applied on top of the noiseless forward model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Zero-mean Gaussian noise whose power is set from the signal power
    /// `mean(v²)` and the requested SNR.
    AdditiveGaussian { snr_db: f64, seed: u64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::AdditiveGaussian { snr_db, .. } if !snr_db.is_finite() => {
                Err(Error::Domain(format!("snr_db must be finite, got {snr_db}")))
            }
            _ => Ok(()),
        }
    }

    /// Same model with a different noise seed, e.g. one stream per sample.
    pub fn reseeded(&self, index: u64) -> NoiseModel {
        match *self {
            NoiseModel::None => NoiseModel::None,
            NoiseModel::AdditiveGaussian { snr_db, seed } => NoiseModel::AdditiveGaussian {
                snr_db,
                seed: seeds::derive(seed, "noise-sample", index),
            },
        }
    }
}

pub fn apply_noise(clean: &MeasurementVector, noise: &NoiseModel) -> Result<MeasurementVector> {
    noise.validate()?;
    let mut out = clean.clone();
    match *noise {
        NoiseModel::None => {}
        NoiseModel::AdditiveGaussian { snr_db, seed } => {
            let n = clean.values.len().max(1) as f64;
            let power = clean.values.iter().map(|v| v * v).sum::<f64>() / n;
            let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
            let mut rng = seeds::rng(seed, "measurement-noise", 0);
            for v in &mut out.values {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sigma * z;
            }
            out.noise = Some(noise.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> MeasurementVector {
        MeasurementVector::raw((0..n).map(|i| 1.0 + (i % 17) as f64).collect())
    }

    #[test]
    fn none_is_identity() {
        let v = ramp(10);
        assert_eq!(apply_noise(&v, &NoiseModel::None).unwrap(), v);
    }

    #[test]
    fn vanishing_noise() {
        let v = ramp(100);
        let noisy = apply_noise(&v, &NoiseModel::AdditiveGaussian { snr_db: 300.0, seed: 1 }).unwrap();
        for (a, b) in noisy.values.iter().zip(&v.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn empirical_snr_matches_request() {
        let v = ramp(10_000);
        let noisy = apply_noise(&v, &NoiseModel::AdditiveGaussian { snr_db: 20.0, seed: 4 }).unwrap();
        let signal: f64 = v.values.iter().map(|x| x * x).sum();
        let noise: f64 = noisy.values.iter().zip(&v.values).map(|(a, b)| (a - b).powi(2)).sum();
        let snr = 10.0 * (signal / noise).log10();
        assert!((snr - 20.0).abs() < 0.5, "snr {snr}");
    }

    #[test]
    fn deterministic_and_validated() {
        let v = ramp(50);
        let m = NoiseModel::AdditiveGaussian { snr_db: 10.0, seed: 2 };
        assert_eq!(apply_noise(&v, &m).unwrap(), apply_noise(&v, &m).unwrap());
        let bad = NoiseModel::AdditiveGaussian { snr_db: f64::INFINITY, seed: 2 };
        assert!(apply_noise(&v, &bad).is_err());
    }
}
