use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{digest_of, Cell, ExperimentConfig, Method};
use crate::baselines::{baseline_bank, fit_reconstructor, image_segmenter_train, BaselinePipeline, CleanImage, ImageSegmenter};
use crate::container::write_atomic;
use crate::datasets::synthetic::{write_synthetic_natural, write_synthetic_wbc};
use crate::datasets::{list_images, load_natural_pretrain, prepare_wbc, LabeledSample, PreparedDataset, WbcOptions};
use crate::digest::{sha256_hex, FloatHasher};
use crate::evaluation::{
    emit_panels, evaluate, render_markdown, render_plain, rows_to_csv, sample_noise, MetricRow, PanelItem, Segmenter,
};
use crate::network::{NetworkConfig, SegmentationMap};
use crate::sensing::{NoiseModel, SceneImage};
use crate::training::{load_checkpoint, train, Model, Modulation, Stage, TrainConfig, TrainReport, TrainingStrategy};
use crate::{Error, Result};

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "SPISEG_CACHE_DIR";
/// Raw smears written when a stand-in corpus is synthesized.
const SYNTHETIC_WBC_COUNT: usize = 300;
const SYNTHETIC_SEED: u64 = 0;

/// Cache root holding prepared datasets, checkpoints, segmenters and
/// finished cells, each keyed by a content digest.
#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn file(&self, kind: &str, name: &str) -> Result<PathBuf> {
        let dir = self.root.join(kind);
        fs::create_dir_all(&dir)?;
        Ok(dir.join(name))
    }
}

/// Prepared data for a sweep; the natural images load on first use.
pub struct Corpora {
    pub wbc: PreparedDataset,
    pub wbc_digest: String,
    natural_root: PathBuf,
    natural_count: usize,
    natural: Option<(Vec<SceneImage>, String)>,
}

impl Corpora {
    pub fn new(wbc: PreparedDataset, natural_root: PathBuf, natural_count: usize) -> Result<Self> {
        let mut canonical = wbc.clone();
        canonical.manifest.provenance.clear();
        let wbc_digest = sha256_hex(&canonical.to_bytes()?);
        Ok(Self { wbc, wbc_digest, natural_root, natural_count, natural: None })
    }

    pub fn natural(&mut self) -> Result<(&[SceneImage], &str)> {
        if self.natural.is_none() {
            let scenes = load_natural_pretrain(&self.natural_root, self.natural_count)?;
            let mut h = FloatHasher::new();
            h.tag("natural").usize(scenes.len());
            for s in &scenes {
                h.usize(s.dims().0).usize(s.dims().1).f64s(s.pixels().iter());
            }
            let digest = h.finish();
            self.natural = Some((scenes, digest));
        }
        let (s, d) = self.natural.as_ref().expect("loaded above");
        Ok((s, d))
    }
}

fn listing(dir: &Path) -> Result<Vec<(String, u64)>> {
    list_images(dir)?
        .into_iter()
        .map(|p| {
            let len = fs::metadata(&p)?.len();
            Ok((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), len))
        })
        .collect()
}

fn has_images(dir: &Path) -> bool {
    list_images(dir).is_ok_and(|v| !v.is_empty())
}

/// Writes stand-ins if requested, then prepares (or reloads) the split.
pub fn load_corpora(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Corpora> {
    let d = &cfg.data;
    if d.synthesize {
        if !has_images(&d.wbc_root.join("images")) {
            log::info!("writing stand-in blood-smear corpus to {}", d.wbc_root.display());
            write_synthetic_wbc(&d.wbc_root, SYNTHETIC_WBC_COUNT, SYNTHETIC_SEED)?;
        }
        if !d.natural_root.is_dir() || fs::read_dir(&d.natural_root)?.next().is_none() {
            log::info!("writing stand-in natural corpus to {}", d.natural_root.display());
            write_synthetic_natural(&d.natural_root, d.natural_count, SYNTHETIC_SEED)?;
        }
    }
    if !d.wbc_root.is_dir() {
        return Err(Error::Ingestion { offenders: vec![(d.wbc_root.clone(), "missing dataset root".into())] });
    }
    let opts = WbcOptions { quarter: d.quarter, seed: cfg.seed };
    let canonical = d.wbc_root.canonicalize()?;
    let key = digest_of(&(
        "wbc",
        canonical.to_string_lossy(),
        &opts,
        listing(&d.wbc_root.join("images"))?,
        listing(&d.wbc_root.join("labels"))?,
    ));
    let path = ws.file("datasets", &format!("{key}.bin"))?;
    let wbc = match PreparedDataset::load(&path) {
        Ok(ds) => {
            log::info!("prepared dataset served from {}", path.display());
            ds
        }
        Err(_) => {
            let ds = prepare_wbc(&d.wbc_root, &opts)?;
            ds.save(&path)?;
            ds
        }
    };
    Corpora::new(wbc, d.natural_root.clone(), d.natural_count)
}

#[derive(Serialize)]
struct ModelKey<'a> {
    wbc: &'a str,
    natural: Option<&'a str>,
    network: &'a NetworkConfig,
    train: &'a TrainConfig,
    modulation: &'a Modulation,
    seed: u64,
}

struct ModelPlan {
    network: NetworkConfig,
    train: TrainConfig,
    key: String,
}

fn plan_model(cfg: &ExperimentConfig, cell: &Cell, corpora: &mut Corpora) -> Result<ModelPlan> {
    let strategy = cell.training.ok_or_else(|| Error::Config("image_free cell without a training strategy".into()))?;
    let network = cfg.network_for(cell.ratio)?;
    let mut train = cfg.train.clone();
    train.strategy = strategy;
    let natural = match strategy {
        TrainingStrategy::TwoStage => Some(corpora.natural()?.1.to_string()),
        TrainingStrategy::OneStage => None,
    };
    let key = digest_of(&ModelKey {
        wbc: &corpora.wbc_digest,
        natural: natural.as_deref(),
        network: &network,
        train: &train,
        modulation: &cell.modulation,
        seed: cfg.seed,
    });
    Ok(ModelPlan { network, train, key })
}

/// Loads a finished checkpoint, resumes a partial one, or trains from scratch.
pub fn obtain_model(cfg: &ExperimentConfig, cell: &Cell, corpora: &mut Corpora, ws: &Workspace) -> Result<(Model, PathBuf)> {
    let plan = plan_model(cfg, cell, corpora)?;
    let path = ws.file("models", &format!("{}.ckpt", plan.key))?;
    let mut model = match load_checkpoint(&path) {
        Ok(m) => m,
        Err(e) => {
            if path.exists() {
                log::warn!("discarding unreadable checkpoint {}: {e}", path.display());
            }
            Model::new(plan.network.clone(), cell.modulation.clone(), cfg.seed)?
        }
    };
    if model.is_trained(&plan.train) {
        return Ok((model, path));
    }
    log::info!("training {} into {}", cell.label(), path.display());
    let natural: Vec<SceneImage> = match plan.train.strategy {
        TrainingStrategy::TwoStage => corpora.natural()?.0.to_vec(),
        TrainingStrategy::OneStage => Vec::new(),
    };
    let (csv_path, summary_path) = report_paths(&path);
    // a resumed run extends the report of the interrupted one
    let mut report = match model.progress.stage {
        Stage::Initialized => TrainReport::default(),
        _ => fs::read(&summary_path).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default(),
    };
    report.merge(train(&mut model, &natural, &corpora.wbc.train, &plan.train, Some(&path))?);
    report.strategy = Some(plan.train.strategy);
    report.write(&csv_path, &summary_path)?;
    Ok((model, path))
}

/// Training CSV and summary stored beside a cached checkpoint.
pub fn report_paths(checkpoint: &Path) -> (PathBuf, PathBuf) {
    let stem = checkpoint.with_extension("");
    (stem.with_extension("train.csv"), stem.with_extension("summary.json"))
}

/// Clean-image segmenter shared by every baseline cell of a configuration.
pub fn obtain_segmenter(cfg: &ExperimentConfig, corpora: &Corpora, ws: &Workspace) -> Result<ImageSegmenter> {
    let key = digest_of(&("segmenter", &corpora.wbc_digest, &cfg.segmenter));
    let path = ws.file("segmenters", &format!("{key}.bin"))?;
    if let Ok(bytes) = fs::read(&path) {
        match ImageSegmenter::from_bytes(&bytes) {
            Ok(seg) => return Ok(seg),
            Err(e) => log::warn!("discarding unreadable segmenter {}: {e}", path.display()),
        }
    }
    log::info!("training clean-image segmenter into {}", path.display());
    let (seg, _) = image_segmenter_train(&corpora.wbc.train, &cfg.segmenter)?;
    write_atomic(&path, &seg.to_bytes()?)?;
    Ok(seg)
}

/// A scored cell plus its predictions on the first few test samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub row: MetricRow,
    /// Row-major label maps, one per previewed test sample.
    pub preview: Vec<Vec<u8>>,
    pub seconds: f64,
}

fn score<S: Segmenter + ?Sized>(
    seg: &S,
    cell: &Cell,
    cfg: &ExperimentConfig,
    test: &[LabeledSample],
    started: Instant,
) -> Result<CellResult> {
    let scores = evaluate(seg, test, &cfg.noise)?;
    let preview = test
        .iter()
        .take(cfg.panel_samples)
        .map(|s| Ok(seg.segment(&s.scene, &sample_noise(&cfg.noise, s))?.labels.iter().copied().collect()))
        .collect::<Result<_>>()?;
    Ok(CellResult {
        row: MetricRow {
            sampling_ratio: cell.ratio,
            method: cell.method.as_str().into(),
            modulation: cell.modulation_tag().into(),
            training: cell.training_tag().into(),
            pa: scores.pa,
            dice: scores.dice,
            n_samples: scores.n_samples,
            seed: cfg.seed,
        },
        preview,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Trains or loads whatever the cell needs and scores it on the test split.
pub fn run_cell(cfg: &ExperimentConfig, cell: &Cell, corpora: &mut Corpora, ws: &Workspace) -> Result<CellResult> {
    cell.validate()?;
    let started = Instant::now();
    match cell.method {
        Method::ImageFree => {
            let (model, _) = obtain_model(cfg, cell, corpora, ws)?;
            score(&model, cell, cfg, &corpora.wbc.test, started)
        }
        Method::CleanImage => {
            let seg = obtain_segmenter(cfg, corpora, ws)?;
            score(&CleanImage(&seg), cell, cfg, &corpora.wbc.test, started)
        }
        Method::Tvrec | Method::Dlrec => {
            let seg = obtain_segmenter(cfg, corpora, ws)?;
            let bank = baseline_bank(&cell.modulation, cell.ratio, seg.dims())?;
            let method = cell.method.baseline().expect("baseline method");
            let reconstructor = fit_reconstructor(method, &bank, &corpora.wbc.train, &cfg.baseline)?;
            let pipeline = BaselinePipeline { bank: &bank, reconstructor: &reconstructor, segmenter: &seg };
            score(&pipeline, cell, cfg, &corpora.wbc.test, started)
        }
    }
}

#[derive(Serialize)]
struct CellKey<'a> {
    cell: &'a Cell,
    wbc: &'a str,
    noise: &'a NoiseModel,
    seed: u64,
    panel_samples: usize,
    upstream: Option<String>,
    reconstruction: Option<serde_json::Value>,
}

/// Digest covering every input that can change the cell's row.
pub fn cell_digest(cfg: &ExperimentConfig, cell: &Cell, corpora: &mut Corpora) -> Result<String> {
    let upstream = match cell.method {
        Method::ImageFree => Some(plan_model(cfg, cell, corpora)?.key),
        _ => Some(digest_of(&("segmenter", &corpora.wbc_digest, &cfg.segmenter))),
    };
    let reconstruction = match cell.method {
        Method::Tvrec => Some(serde_json::to_value(&cfg.baseline.tv)?),
        Method::Dlrec => Some(serde_json::to_value(&cfg.baseline.dlrec)?),
        _ => None,
    };
    Ok(digest_of(&CellKey {
        cell,
        wbc: &corpora.wbc_digest,
        noise: &cfg.noise,
        seed: cfg.seed,
        panel_samples: cfg.panel_samples,
        upstream,
        reconstruction,
    }))
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub digest: Option<String>,
    pub result: std::result::Result<CellResult, String>,
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub outcomes: Vec<CellOutcome>,
}

impl SweepReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok()).map(|r| r.row.clone()).collect()
    }

    pub fn failures(&self) -> Vec<(&Cell, &str)> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().err().map(|e| (&o.cell, e.as_str()))).collect()
    }

    pub fn find(&self, cell: &Cell) -> Option<&CellResult> {
        self.outcomes.iter().find(|o| &o.cell == cell).and_then(|o| o.result.as_ref().ok())
    }

    /// Results CSV, plain and Markdown tables, the resolved configuration and,
    /// when previews exist, a panel grid.
    pub fn write_outputs(&self, test: &[LabeledSample], dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let rows = self.rows();
        let mut written = Vec::new();
        let mut put = |name: &str, text: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, text)?;
            written.push(p);
            Ok(())
        };
        put("results.csv", rows_to_csv(&rows, true)?)?;
        put("table.txt", render_plain(&rows))?;
        put("table.md", render_markdown(&rows))?;
        put("config.toml", self.config.to_toml()?)?;
        let failures: String = self.failures().iter().map(|(c, e)| format!("{}: {e}\n", c.label())).collect();
        if !failures.is_empty() {
            put("failures.txt", failures)?;
        }
        if let Some(p) = self.emit_panels(test, &dir.join("panels.png"))? {
            written.push(p);
        }
        Ok(written)
    }

    fn emit_panels(&self, test: &[LabeledSample], path: &Path) -> Result<Option<PathBuf>> {
        let done: Vec<(&Cell, &CellResult)> =
            self.outcomes.iter().filter_map(|o| o.result.as_ref().ok().map(|r| (&o.cell, r))).collect();
        let n = done.iter().map(|(_, r)| r.preview.len()).min().unwrap_or(0).min(test.len());
        let mut items = Vec::with_capacity(n);
        for (k, sample) in test.iter().take(n).enumerate() {
            let mut maps = vec![sample.labels.clone()];
            for (_, r) in &done {
                let labels = ndarray::Array2::from_shape_vec(sample.labels.dims(), r.preview[k].clone())
                    .map_err(|e| Error::Shape(e.to_string()))?;
                maps.push(SegmentationMap::new(labels, sample.labels.n_classes)?);
            }
            items.push(PanelItem { scene: sample.scene.clone(), maps });
        }
        let mut headers = vec!["truth".to_string()];
        headers.extend(done.iter().map(|(c, _)| format!("{} {}", c.method.as_str(), c.ratio)));
        emit_panels(&items, &headers, path)
    }
}

fn cached_result(path: &Path) -> Option<CellResult> {
    serde_json::from_slice(&fs::read(path).ok()?).ok()
}

/// Runs every cell, serving finished ones from the cache. A failing cell is
/// recorded and the sweep moves on.
pub fn sweep(cfg: &ExperimentConfig, corpora: &mut Corpora, ws: &Workspace) -> Result<SweepReport> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    if cfg.cells.is_empty() {
        return Err(Error::Config(format!("experiment `{}` has no cells", cfg.name)));
    }
    let mut outcomes = Vec::with_capacity(cfg.cells.len());
    for cell in &cfg.cells {
        let mut digest = None;
        let mut cached = false;
        let result = (|| -> Result<CellResult> {
            let d = cell_digest(&cfg, cell, corpora)?;
            let path = ws.file("cells", &format!("{d}.json"))?;
            digest = Some(d);
            if let Some(r) = cached_result(&path) {
                cached = true;
                return Ok(r);
            }
            let r = run_cell(&cfg, cell, corpora, ws)?;
            write_atomic(&path, &serde_json::to_vec_pretty(&r)?)?;
            Ok(r)
        })();
        match &result {
            Ok(r) => log::info!(
                "{}: PA {:.2} DICE {:.2}{}",
                cell.label(),
                r.row.pa,
                r.row.dice,
                if cached { " (cached)" } else { "" }
            ),
            Err(e) => log::error!("{} failed: {e}", cell.label()),
        }
        outcomes.push(CellOutcome { cell: cell.clone(), digest, result: result.map_err(|e| e.to_string()), cached });
    }
    Ok(SweepReport { config: cfg, outcomes })
}
