//! Serializable experiment configuration, presets and the cached sweep
//! runner that turns a list of cells into result rows.

mod presets;
mod sweep;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, SegmenterConfig};
use crate::digest::sha256_hex;
use crate::network::NetworkConfig;
use crate::sensing::{sampling_count, NoiseModel};
use crate::training::{Modulation, TrainConfig, TrainingStrategy};
use crate::{Error, Result, MODEL_REVISION};

pub use presets::{preset, PRESETS};
pub use sweep::{
    cell_digest, load_corpora, obtain_model, obtain_segmenter, report_paths, run_cell, sweep, CellOutcome, CellResult, Corpora, SweepReport,
    Workspace, CACHE_ENV,
};

/// How a cell turns measurements into labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// End-to-end network straight from measurements.
    ImageFree,
    Tvrec,
    Dlrec,
    /// Segmenter on the clean scenes; no sensing at all.
    CleanImage,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ImageFree => "image_free",
            Method::Tvrec => "tvrec",
            Method::Dlrec => "dlrec",
            Method::CleanImage => "clean_image",
        }
    }

    pub fn baseline(self) -> Option<crate::baselines::BaselineMethod> {
        match self {
            Method::Tvrec => Some(crate::baselines::BaselineMethod::Tvrec),
            Method::Dlrec => Some(crate::baselines::BaselineMethod::Dlrec),
            _ => None,
        }
    }
}

fn learned() -> Modulation {
    Modulation::Learned
}

/// One point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub ratio: f64,
    pub method: Method,
    #[serde(default = "learned")]
    pub modulation: Modulation,
    /// Only meaningful for the image-free method.
    #[serde(default)]
    pub training: Option<TrainingStrategy>,
}

impl Cell {
    pub fn image_free(ratio: f64, modulation: Modulation, training: TrainingStrategy) -> Self {
        Self { ratio, method: Method::ImageFree, modulation, training: Some(training) }
    }

    pub fn baseline(ratio: f64, method: Method, modulation: Modulation) -> Self {
        Self { ratio, method, modulation, training: None }
    }

    pub fn clean_image() -> Self {
        Self { ratio: 1.0, method: Method::CleanImage, modulation: Modulation::Learned, training: None }
    }

    pub fn validate(&self) -> Result<()> {
        sampling_count(self.ratio, 1).map_err(|e| Error::Config(e.to_string()))?;
        match self.method {
            Method::ImageFree if self.training.is_none() => {
                Err(Error::Config("image_free cells need `training = \"two_stage\"` or `\"one_stage\"`".into()))
            }
            Method::Tvrec | Method::Dlrec if !self.modulation.is_fixed() => {
                Err(Error::Config(format!("{} cells need a random or hadamard modulation", self.method.as_str())))
            }
            Method::Tvrec | Method::Dlrec | Method::CleanImage if self.training.is_some() => {
                Err(Error::Config(format!("{} cells take no training strategy", self.method.as_str())))
            }
            _ => Ok(()),
        }
    }

    pub fn modulation_tag(&self) -> &'static str {
        match self.method {
            Method::CleanImage => "none",
            _ => self.modulation.strategy().as_str(),
        }
    }

    pub fn training_tag(&self) -> &'static str {
        self.training.map_or("none", TrainingStrategy::as_str)
    }

    pub fn label(&self) -> String {
        format!("{} {} {} @{}", self.method.as_str(), self.modulation_tag(), self.training_tag(), self.ratio)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `images/` + `labels/` blood-smear corpus.
    pub wbc_root: PathBuf,
    /// Directory tree of natural images for stage 1.
    pub natural_root: PathBuf,
    /// First quarter of the raw smears only.
    pub quarter: bool,
    pub natural_count: usize,
    /// Write the procedural stand-in corpora into missing roots.
    pub synthesize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            wbc_root: PathBuf::from("data/wbc"),
            natural_root: PathBuf::from("data/natural"),
            quarter: false,
            natural_count: 1000,
            synthesize: false,
        }
    }
}

/// Everything one run depends on. `seed` drives every random choice; the
/// seeds nested in the sub-configurations are overwritten by [`Self::resolved`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub segmenter: SegmenterConfig,
    pub baseline: BaselineConfig,
    pub noise: NoiseModel,
    /// Test samples shown per panel grid; 0 disables panels.
    pub panel_samples: usize,
    pub cells: Vec<Cell>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            seed: 0,
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            segmenter: SegmenterConfig::default(),
            baseline: BaselineConfig::default(),
            noise: NoiseModel::None,
            panel_samples: 3,
            cells: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Copy with every nested seed tied to `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.seed = c.seed;
        c.segmenter.seed = c.seed;
        c.baseline.dlrec.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.segmenter.schedule.validate("segmenter")?;
        self.baseline.dlrec.schedule.validate("baseline.dlrec")?;
        self.baseline.tv.validate()?;
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.segmenter.batch_size == 0 || self.baseline.dlrec.batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        let mut probe = self.network.clone();
        probe.n_measurements = 1;
        probe.validate()?;
        for cell in &self.cells {
            cell.validate()?;
        }
        Ok(())
    }

    /// Network configuration for a cell's sampling ratio.
    pub fn network_for(&self, ratio: f64) -> Result<NetworkConfig> {
        let (h, w) = self.network.scene_dims;
        let mut net = self.network.clone();
        net.n_measurements = sampling_count(ratio, h * w)?;
        Ok(net)
    }

    pub fn digest(&self) -> String {
        digest_of(&self.resolved())
    }
}

/// SHA-256 of the canonical JSON form, salted with [`MODEL_REVISION`].
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(&(MODEL_REVISION, value)).expect("config types serialize");
    sha256_hex(&json)
}

#[cfg(test)]
mod tests;
