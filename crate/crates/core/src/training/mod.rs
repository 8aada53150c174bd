//! Two-stage training.
//!
//! Stage 1 pretrains the encoder, the expansion layer and the feature block
//! on natural images by reconstructing each image from its own measurements;
//! the segmentation head receives no gradient. Stage 2 trains every group on
//! one-hot segmentation targets. One-stage mode runs stage 2 from scratch.
//! Fixed pattern banks (random, Hadamard) keep the encoder frozen throughout.

mod checkpoint;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledSample;
use crate::network::{mse, one_hot, EncoderWeights, ForwardDepth, MeasurementNorm, Network, NetworkConfig};
use crate::nn::{Adam, Grads, Param, ParamGroup, ParamStore};
use crate::sensing::{make_hadamard_patterns, make_random_patterns, HadamardOrdering, PatternBank, SceneImage, Strategy};
use crate::{seeds, Error, Result};

pub use checkpoint::{from_bytes as checkpoint_from_bytes, load_checkpoint, save_checkpoint, to_bytes as checkpoint_to_bytes, CHECKPOINT_VERSION};

/// `lr0 · decay^⌊epoch / every⌋`.
pub fn lr_at(epoch: usize, lr0: f64, decay: f64, every: usize) -> f64 {
    lr0 * decay.powi((epoch / every.max(1)) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub dataset_id: String,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
}

impl StageConfig {
    pub fn stage1() -> Self {
        Self { dataset_id: "natural".into(), lr0: 2e-3, decay: 0.8, decay_every: 20, epochs: 30 }
    }

    pub fn stage2() -> Self {
        Self { dataset_id: "wbc".into(), lr0: 1e-3, decay: 0.8, decay_every: 50, epochs: 100 }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_at(epoch, self.lr0, self.decay, self.decay_every)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("{name}.lr0 must be positive")));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("{name}.decay must lie in (0, 1]")));
        }
        if self.decay_every == 0 || self.epochs == 0 {
            return Err(Error::Config(format!("{name}.decay_every and {name}.epochs must be at least 1")));
        }
        Ok(())
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::stage2()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStrategy {
    #[default]
    TwoStage,
    OneStage,
}

impl TrainingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingStrategy::TwoStage => "two_stage",
            TrainingStrategy::OneStage => "one_stage",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub seed: u64,
    pub batch_size: usize,
    pub strategy: TrainingStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: StageConfig::stage1(),
            stage2: StageConfig::stage2(),
            weight_decay: 1e-4,
            optimizer: Optimizer::Adam,
            loss: Loss::Mse,
            seed: 0,
            batch_size: 32,
            strategy: TrainingStrategy::TwoStage,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// How the encoder filters are obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Modulation {
    /// Trained end to end.
    Learned,
    /// Fixed uniform random bank.
    Random { seed: u64 },
    /// Fixed ±1 Hadamard rows.
    Hadamard { ordering: HadamardOrdering },
}

impl Modulation {
    pub fn strategy(&self) -> Strategy {
        match self {
            Modulation::Learned => Strategy::Learned,
            Modulation::Random { .. } => Strategy::Random,
            Modulation::Hadamard { .. } => Strategy::Hadamard,
        }
    }

    pub fn is_fixed(&self) -> bool {
        !matches!(self, Modulation::Learned)
    }

    /// The fixed bank, or `None` for learned modulation.
    pub fn fixed_bank(&self, count: usize, dims: (usize, usize)) -> Result<Option<PatternBank>> {
        Ok(match self {
            Modulation::Learned => None,
            Modulation::Random { seed } => Some(make_random_patterns(count, dims, *seed)?),
            Modulation::Hadamard { ordering } => Some(make_hadamard_patterns(count, dims, *ordering)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialized,
    Stage1,
    Stage2,
}

/// Training stage reached and epochs completed within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub stage: Stage,
    pub epochs_done: usize,
}

/// A network plus everything needed to deploy or resume it.
#[derive(Clone, Debug)]
pub struct Model {
    pub network: Network<f32>,
    pub modulation: Modulation,
    pub progress: Progress,
    pub seed: u64,
    /// Raw-measurement statistics of the segmentation training set, recorded
    /// when stage 2 completes.
    pub train_stats: Option<MeasurementNorm>,
}

impl Model {
    pub fn new(config: NetworkConfig, modulation: Modulation, seed: u64) -> Result<Self> {
        let network = Network::uninitialized(config)?;
        let mut model = Self {
            network,
            modulation,
            progress: Progress { stage: Stage::Initialized, epochs_done: 0 },
            seed,
            train_stats: None,
        };
        model.initialize(seed)?;
        Ok(model)
    }

    /// Fan-in scaled initialization; fixed banks are copied into the encoder.
    pub fn initialize(&mut self, seed: u64) -> Result<()> {
        initialize(&mut self.network, seed);
        let cfg = self.network.config().clone();
        if let Some(bank) = self.modulation.fixed_bank(cfg.n_measurements, cfg.scene_dims)? {
            let filters = bank.to_matrix().mapv(|v| v as f32);
            let filters = filters
                .into_shape_with_order((cfg.n_measurements, cfg.scene_dims.0, cfg.scene_dims.1))
                .map_err(|e| Error::Shape(e.to_string()))?;
            self.network.set_encoder_weights(&EncoderWeights::new(filters)?)?;
        }
        self.seed = seed;
        self.progress = Progress { stage: Stage::Initialized, epochs_done: 0 };
        self.train_stats = None;
        Ok(())
    }

    /// Snapshot of the encoder filters as the illumination bank.
    pub fn bank(&self) -> Result<PatternBank> {
        let w = self.network.encoder_weights();
        let patterns = w.filters().outer_iter().map(|f| f.mapv(f64::from)).collect();
        let seed = match self.modulation {
            Modulation::Random { seed } => seed,
            _ => self.seed,
        };
        PatternBank::new(patterns, self.modulation.strategy(), seed)
    }

    pub fn is_trained(&self, cfg: &TrainConfig) -> bool {
        self.progress.stage == Stage::Stage2 && self.progress.epochs_done >= cfg.stage2.epochs
    }
}

/// Weights drawn with variance `2 / fan_in` (rescaled to the exact value),
/// biases zero, deterministic in `seed`.
pub fn initialize<T: ndarray::NdFloat>(network: &mut Network<T>, seed: u64) {
    network.params_mut().initialize(seed);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub pa: f64,
    pub dice: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub strategy: Option<TrainingStrategy>,
    pub records: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub final_metrics: Option<FinalMetrics>,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainReport {
    pub fn losses(&self, stage: u8) -> Vec<f64> {
        self.records.iter().filter(|r| r.stage == stage).map(|r| r.loss).collect()
    }

    pub fn merge(&mut self, other: TrainReport) {
        self.records.extend(other.records);
        self.wall_clock_secs += other.wall_clock_secs;
        if other.checkpoint_path.is_some() {
            self.checkpoint_path = other.checkpoint_path;
        }
    }

    /// `epoch,stage,lr,loss` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,stage,lr,loss\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.stage, r.lr, r.loss));
        }
        out
    }

    pub fn write(&self, csv_path: &Path, summary_path: &Path) -> Result<()> {
        std::fs::File::create(csv_path)?.write_all(self.to_csv().as_bytes())?;
        std::fs::write(summary_path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn measurement_stats(network: &Network<f32>, scenes: &[&SceneImage]) -> Result<MeasurementNorm> {
    let samples = scenes.iter().map(|s| network.encode(s).map(|m| m.values)).collect::<Result<Vec<_>>>()?;
    MeasurementNorm::from_samples(&samples)
}

/// Anything owning an `f32` parameter store that [`fit`] can optimize.
pub trait Trainable {
    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;
}

impl Trainable for Model {
    fn store(&self) -> &ParamStore<f32> {
        self.network.params()
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        self.network.params_mut()
    }
}

/// Schedule and batching for one [`fit`] call.
pub struct FitSpec<'a> {
    pub schedule: &'a StageConfig,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stage number recorded in the report; also selects the shuffle stream.
    pub stage: u8,
    pub start_epoch: usize,
}

/// Mini-batch Adam over `n_samples` items: each epoch shuffles from
/// `(seed, stage, epoch)`, averages per-sample gradients over the batch and
/// steps the parameters selected by `trainable`. `sample` returns one
/// sample's loss after accumulating its gradient; `on_epoch` runs after each
/// epoch. Aborts on a non-finite loss or gradient.
pub fn fit<M: Trainable>(
    owner: &mut M,
    n_samples: usize,
    spec: &FitSpec<'_>,
    trainable: impl Fn(&Param<f32>) -> bool,
    sample: impl Fn(&M, usize, &mut Grads<f32>) -> Result<f64>,
    mut on_epoch: impl FnMut(&mut M, &EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    if n_samples == 0 {
        return Err(Error::Training("no training samples".into()));
    }
    let mut records = Vec::new();
    let mut adam = Adam::new(owner.store(), spec.weight_decay);
    let mut grads = owner.store().zero_grads();
    for epoch in spec.start_epoch..spec.schedule.epochs {
        let lr = spec.schedule.lr(epoch);
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut seeds::rng(spec.seed, &format!("stage{}-order", spec.stage), epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(spec.batch_size.max(1)) {
            grads.fill_zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += sample(owner, i, &mut grads)?;
            }
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss or gradient in stage {} epoch {epoch} (batch loss {batch_loss})",
                    spec.stage
                )));
            }
            grads.scale(1.0 / batch.len() as f32);
            adam.step(owner.store_mut(), &grads, lr, &trainable);
            total += batch_loss;
        }
        let loss = total / n_samples as f64;
        log::info!("stage {} epoch {epoch}: lr {lr:.3e} loss {loss:.6}", spec.stage);
        let record = EpochRecord { stage: spec.stage, epoch, lr, loss };
        on_epoch(owner, &record)?;
        records.push(record);
    }
    Ok(records)
}

fn run_stage(
    model: &mut Model,
    stage: u8,
    n_samples: usize,
    cfg: &TrainConfig,
    start_epoch: usize,
    checkpoint: Option<&Path>,
    trainable: impl Fn(&Param<f32>) -> bool,
    sample: impl Fn(&Network<f32>, usize, &mut Grads<f32>) -> Result<f64>,
) -> Result<TrainReport> {
    let started = Instant::now();
    let spec = FitSpec {
        schedule: if stage == 1 { &cfg.stage1 } else { &cfg.stage2 },
        batch_size: cfg.batch_size,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        stage,
        start_epoch,
    };
    let which = if stage == 1 { Stage::Stage1 } else { Stage::Stage2 };
    let records = fit(
        model,
        n_samples,
        &spec,
        trainable,
        |m, i, g| sample(&m.network, i, g),
        |m, r| {
            m.progress = Progress { stage: which, epochs_done: r.epoch + 1 };
            match checkpoint {
                Some(path) => save_checkpoint(m, path),
                None => Ok(()),
            }
        },
    )?;
    Ok(TrainReport {
        strategy: None,
        checkpoint_path: checkpoint.filter(|_| !records.is_empty()).map(Path::to_path_buf),
        records,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        final_metrics: None,
    })
}

/// Reconstruction pretraining: only the encoder (when learned), expansion
/// and feature-extraction groups change.
pub fn train_stage1(
    model: &mut Model,
    images: &[SceneImage],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Training("stage 1 needs at least one image".into()));
    }
    let start = match model.progress.stage {
        Stage::Initialized => 0,
        Stage::Stage1 => model.progress.epochs_done,
        Stage::Stage2 => return Err(Error::Training("model already entered stage 2".into())),
    };
    if images[0].dims() != model.network.config().scene_dims {
        return Err(Error::Shape("stage-1 images do not match the network scene size".into()));
    }
    let fixed = model.modulation.is_fixed();
    if start == 0 && fixed {
        let refs: Vec<&SceneImage> = images.iter().collect();
        let stats = measurement_stats(&model.network, &refs)?;
        model.network.set_input_norm(stats)?;
    }
    let targets: Vec<Array3<f32>> = images.iter().map(|s| s.pixels().mapv(|v| v as f32).insert_axis(Axis(0))).collect();
    let encoder_grad = !fixed;
    let mut report = run_stage(
        model,
        1,
        images.len(),
        cfg,
        start,
        checkpoint,
        |p| match p.group {
            ParamGroup::Encoder => encoder_grad,
            ParamGroup::Expansion | ParamGroup::FeatureExtraction => true,
            _ => false,
        },
        |net, i, grads| {
            let tr = net.forward_trace(images[i].pixels(), ForwardDepth::FeatureMap)?;
            let (loss, d) = mse(&tr.feature_map, &targets[i]);
            net.backward(&tr, Some(&d), None, grads, encoder_grad);
            Ok(loss)
        },
    )?;
    if model.progress.stage == Stage::Initialized {
        model.progress = Progress { stage: Stage::Stage1, epochs_done: 0 };
    }
    report.strategy = Some(TrainingStrategy::TwoStage);
    Ok(report)
}

/// Segmentation training of every group (the encoder only when learned).
pub fn train_stage2(
    model: &mut Model,
    data: &[LabeledSample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Training("stage 2 needs at least one sample".into()));
    }
    let n_classes = model.network.config().n_classes;
    if let Some(bad) = data.iter().find(|s| s.labels.n_classes != n_classes) {
        return Err(Error::Training(format!(
            "dataset sample {} has {} classes, model has {n_classes}",
            bad.source_id, bad.labels.n_classes
        )));
    }
    let start = match (model.progress.stage, cfg.strategy) {
        (Stage::Initialized, TrainingStrategy::OneStage) => 0,
        (Stage::Initialized, TrainingStrategy::TwoStage) => {
            return Err(Error::Training("stage 1 has not run; request one-stage mode to skip it".into()))
        }
        (Stage::Stage1, _) if model.progress.epochs_done < cfg.stage1.epochs => {
            return Err(Error::Training(format!(
                "stage 1 stopped after {} of {} epochs",
                model.progress.epochs_done, cfg.stage1.epochs
            )))
        }
        (Stage::Stage1, _) => 0,
        (Stage::Stage2, _) => model.progress.epochs_done,
    };
    let fixed = model.modulation.is_fixed();
    let scenes: Vec<&SceneImage> = data.iter().map(|s| &s.scene).collect();
    if start == 0 {
        if fixed {
            let stats = measurement_stats(&model.network, &scenes)?;
            model.network.fold_input_norm(stats)?;
        }
        model.progress = Progress { stage: Stage::Stage2, epochs_done: 0 };
    }
    let targets: Vec<Array3<f32>> = data.iter().map(|s| one_hot(&s.labels.labels, n_classes)).collect();
    let encoder_grad = !fixed;
    let mut report = run_stage(
        model,
        2,
        data.len(),
        cfg,
        start,
        checkpoint,
        |p| p.group != ParamGroup::Encoder || encoder_grad,
        |net, i, grads| {
            let tr = net.forward_trace(data[i].scene.pixels(), ForwardDepth::Scores)?;
            let scores = tr.scores.as_ref().expect("scores requested");
            let (loss, d) = mse(scores, &targets[i]);
            net.backward(&tr, None, Some(&d), grads, encoder_grad);
            Ok(loss)
        },
    )?;
    if model.progress.epochs_done >= cfg.stage2.epochs && model.train_stats.is_none() {
        let stats = measurement_stats(&model.network, &scenes)?;
        model.network.fold_input_norm(stats.clone())?;
        model.train_stats = Some(stats);
        if let Some(path) = checkpoint {
            save_checkpoint(model, path)?;
        }
    }
    report.strategy = Some(cfg.strategy);
    Ok(report)
}

/// Runs whatever stages remain for `cfg.strategy`.
pub fn train(
    model: &mut Model,
    natural: &[SceneImage],
    data: &[LabeledSample],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TrainReport> {
    let mut report = TrainReport { strategy: Some(cfg.strategy), ..Default::default() };
    if cfg.strategy == TrainingStrategy::TwoStage && model.progress.stage != Stage::Stage2 {
        report.merge(train_stage1(model, natural, cfg, checkpoint)?);
    }
    report.merge(train_stage2(model, data, cfg, checkpoint)?);
    report.strategy = Some(cfg.strategy);
    Ok(report)
}

/// Scene array helper for callers holding plain arrays.
pub fn scenes_from_arrays(arrays: Vec<Array2<f64>>) -> Result<Vec<SceneImage>> {
    arrays.into_iter().map(SceneImage::new).collect()
}

#[cfg(test)]
mod tests;
