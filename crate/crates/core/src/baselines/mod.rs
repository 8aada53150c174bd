//! Reconstruct-then-segment competitors: TV-regularized or learned
//! reconstruction from the same simulated measurements, followed by an
//! image-domain segmenter trained on clean images.

mod dlrec;
mod segmenter;
mod tv;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::datasets::LabeledSample;
use crate::evaluation::{evaluate, MetricRow, Segmenter};
use crate::network::SegmentationMap;
use crate::nn::ParamStore;
use crate::sensing::{sampling_count, simulate_measurements, NoiseModel, PatternBank, SceneImage};
use crate::training::Modulation;
use crate::{Error, Result};

pub use dlrec::{dlrec_reconstruct, dlrec_train, DlRecConfig, DlReconstructor};
pub use segmenter::{image_segmenter_train, ImageSegmenter, SegmenterConfig};
pub use tv::{total_variation, tv_reconstruct, ReconstructedImage, StepRule, TvConfig, TvKind, TvProblem};

const PARAMS_VERSION: u32 = 1;
/// Upper bound on parameters a baseline container may declare.
const MAX_VALUES: usize = 1 << 28;

fn pack<H: Serialize>(magic: &[u8; 8], header: &H, store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let payload = container::f64s_to_le(store.to_f64_vec());
    Ok(container::encode(magic, PARAMS_VERSION, &serde_json::to_vec(header)?, &payload))
}

fn unpack<H: DeserializeOwned>(bytes: &[u8], magic: &[u8; 8]) -> Result<(H, Vec<f64>)> {
    let (header, payload) = container::decode(bytes, magic, PARAMS_VERSION)?;
    if payload.len() / 8 > MAX_VALUES {
        return Err(Error::Checkpoint("parameter payload too large".into()));
    }
    Ok((serde_json::from_slice(header)?, container::le_to_f64s(payload)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Tvrec,
    Dlrec,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Tvrec => "tvrec",
            BaselineMethod::Dlrec => "dlrec",
        }
    }
}

impl std::str::FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tvrec" => Ok(BaselineMethod::Tvrec),
            "dlrec" => Ok(BaselineMethod::Dlrec),
            other => Err(Error::Config(format!("unknown baseline method `{other}` (expected tvrec or dlrec)"))),
        }
    }
}

/// A fitted reconstruction stage.
pub enum Reconstructor {
    Tv { problem: Box<TvProblem>, cfg: TvConfig },
    DlRec(Box<DlReconstructor>),
}

impl Reconstructor {
    pub fn reconstruct(&self, m: &crate::sensing::MeasurementVector) -> Result<ReconstructedImage> {
        match self {
            Reconstructor::Tv { problem, cfg } => problem.solve(m, cfg),
            Reconstructor::DlRec(r) => r.reconstruct(m),
        }
    }
}

/// Simulate → reconstruct → segment, usable wherever a [`Segmenter`] is.
pub struct BaselinePipeline<'a> {
    pub bank: &'a PatternBank,
    pub reconstructor: &'a Reconstructor,
    pub segmenter: &'a ImageSegmenter,
}

impl BaselinePipeline<'_> {
    pub fn reconstruct_scene(&self, scene: &SceneImage, noise: &NoiseModel) -> Result<ReconstructedImage> {
        let m = simulate_measurements(scene, self.bank, noise)?;
        self.reconstructor.reconstruct(&m)
    }
}

impl Segmenter for BaselinePipeline<'_> {
    fn segment(&self, scene: &SceneImage, noise: &NoiseModel) -> Result<SegmentationMap> {
        let rec = self.reconstruct_scene(scene, noise)?;
        self.segmenter.segment(rec.pixels.view())
    }
}

/// Segmenter applied to the clean scenes; the upper bound for the pipelines.
pub struct CleanImage<'a>(pub &'a ImageSegmenter);

impl Segmenter for CleanImage<'_> {
    fn segment(&self, scene: &SceneImage, _noise: &NoiseModel) -> Result<SegmentationMap> {
        self.0.segment(scene.pixels())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub tv: TvConfig,
    pub dlrec: DlRecConfig,
}

/// Fixed bank for a baseline cell; learned modulation has no meaning here.
pub fn baseline_bank(modulation: &Modulation, ratio: f64, dims: (usize, usize)) -> Result<PatternBank> {
    let n = sampling_count(ratio, dims.0 * dims.1)?;
    modulation
        .fixed_bank(n, dims)?
        .ok_or_else(|| Error::Config("baselines need a fixed (random or hadamard) pattern bank".into()))
}

pub fn fit_reconstructor(
    method: BaselineMethod,
    bank: &PatternBank,
    train: &[LabeledSample],
    cfg: &BaselineConfig,
) -> Result<Reconstructor> {
    Ok(match method {
        BaselineMethod::Tvrec => {
            cfg.tv.validate()?;
            Reconstructor::Tv { problem: Box::new(TvProblem::new(bank)?), cfg: cfg.tv.clone() }
        }
        BaselineMethod::Dlrec => {
            let scenes: Vec<SceneImage> = train.iter().map(|s| s.scene.clone()).collect();
            Reconstructor::DlRec(Box::new(dlrec_train(&scenes, bank, &cfg.dlrec)?.0))
        }
    })
}

/// Scores `method` at every ratio on `test`; one row per ratio.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline_pipeline(
    train: &[LabeledSample],
    test: &[LabeledSample],
    ratios: &[f64],
    method: BaselineMethod,
    modulation: &Modulation,
    cfg: &BaselineConfig,
    segmenter: &ImageSegmenter,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let bank = baseline_bank(modulation, ratio, segmenter.dims())?;
        let reconstructor = fit_reconstructor(method, &bank, train, cfg)?;
        let pipeline = BaselinePipeline { bank: &bank, reconstructor: &reconstructor, segmenter };
        let scores = evaluate(&pipeline, test, noise)?;
        rows.push(MetricRow {
            sampling_ratio: ratio,
            method: method.as_str().into(),
            modulation: bank.strategy().as_str().into(),
            training: "none".into(),
            pa: scores.pa,
            dice: scores.dice,
            n_samples: scores.n_samples,
            seed,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
