//! `spiseg` command-line entry point.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spiseg::evaluation::{append_rows, encode_palette, evaluate_model, render_markdown, render_plain, MetricRow};
use spiseg::experiment::{
    load_corpora, obtain_model, preset, report_paths, sweep, Cell, ExperimentConfig, Method, Workspace, CACHE_ENV, PRESETS,
};
use spiseg::measurement_io::{calibrate, read_recording, verify_manifest, Calibration};
use spiseg::raster::write_gray_png;
use spiseg::sensing::export::{export_bank, BankManifest};
use spiseg::sensing::HadamardOrdering;
use spiseg::training::{load_checkpoint, save_checkpoint, FinalMetrics, Modulation, TrainReport, TrainingStrategy};
use spiseg::Error;

#[derive(Parser)]
#[command(name = "spiseg", version, about = "Image-free single-pixel segmentation experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration, used when no file is given.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cache for prepared data, checkpoints and finished cells.
    #[arg(long, global = true, env = CACHE_ENV, default_value = ".spiseg-cache")]
    cache_dir: PathBuf,
    /// Parent of the per-invocation run directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,
    /// Use the first quarter of the blood-smear corpus.
    #[arg(long, global = true)]
    quarter: bool,
    /// Write stand-in corpora into missing dataset roots.
    #[arg(long, global = true)]
    synthesize: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModulationArg {
    Learned,
    Random,
    Hadamard,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Tvrec,
    Dlrec,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, augment and split the datasets; writes the manifest.
    PrepareData,
    /// Train one image-free model (stage 1 then stage 2 unless --one-stage).
    Train {
        #[arg(long, default_value_t = 0.01)]
        ratio: f64,
        #[arg(long)]
        one_stage: bool,
        #[arg(long, value_enum, default_value = "learned")]
        modulation: ModulationArg,
    },
    /// Run every cell of the configuration; emits CSV, tables and panels.
    Sweep,
    /// Write a checkpoint's illumination patterns as PNG + CSV + manifest.
    ExportPatterns {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Segment one detector recording with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Recording CSV (`pattern_index,value`).
        #[arg(long)]
        measurements: PathBuf,
        /// Calibration TOML; defaults to z-scoring with the checkpoint statistics.
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Bank manifest the recording was taken with; checked against the checkpoint.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct-then-segment pipelines at the given ratios.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineArg,
        #[arg(long, value_delimiter = ',', default_value = "1.0,0.01")]
        ratios: Vec<f64>,
        #[arg(long, value_enum, default_value = "hadamard")]
        modulation: ModulationArg,
        /// Results CSV to append to.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training label written into the row.
        #[arg(long, default_value = "two_stage")]
        training: String,
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::PrepareData => "prepare-data",
            Command::Train { .. } => "train",
            Command::Sweep => "sweep",
            Command::ExportPatterns { .. } => "export-patterns",
            Command::Infer { .. } => "infer",
            Command::Baseline { .. } => "baseline",
            Command::Eval { .. } => "eval",
        }
    }
}

#[derive(Serialize)]
struct CommandResult {
    exit_code: u8,
    artifacts: Vec<PathBuf>,
    log_path: PathBuf,
    error: Option<String>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Ingestion { .. }
        | Error::DatasetUnavailable(_)
        | Error::Parse { .. }
        | Error::Shape(_)
        | Error::Calibration(_)
        | Error::Checkpoint(_)
        | Error::Version { .. }
        | Error::Digest { .. }
        | Error::Io(_)
        | Error::Image(_)
        | Error::Csv(_)
        | Error::Json(_) => 3,
        _ => 4,
    }
}

/// Log sink writing to stderr and the run log.
struct Tee(Mutex<fs::File>);

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        std::io::stderr().write_all(buf)?;
        self.0.lock().unwrap().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.0.lock().unwrap().flush()
    }
}

fn modulation(arg: ModulationArg, seed: u64) -> Modulation {
    match arg {
        ModulationArg::Learned => Modulation::Learned,
        ModulationArg::Random => Modulation::Random { seed },
        ModulationArg::Hadamard => Modulation::Hadamard { ordering: HadamardOrdering::Sequency },
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::read(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.data.quarter |= c.quarter;
    cfg.data.synthesize |= c.synthesize;
    Ok(cfg.resolved())
}

struct Run {
    dir: PathBuf,
    ws: Workspace,
    cfg: ExperimentConfig,
}

impl Run {
    fn out(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn write_rows(run: &Run, rows: &[MetricRow], results: Option<&PathBuf>) -> Result<Vec<PathBuf>, Error> {
    let csv = results.cloned().unwrap_or_else(|| run.out("results.csv"));
    append_rows(&csv, rows)?;
    let (txt, md) = (run.out("table.txt"), run.out("table.md"));
    fs::write(&txt, render_plain(rows))?;
    fs::write(&md, render_markdown(rows))?;
    Ok(vec![csv, txt, md])
}

fn execute(command: &Command, run: &mut Run) -> Result<Vec<PathBuf>, Error> {
    let cfg = run.cfg.clone();
    match command {
        Command::PrepareData => {
            let corpora = load_corpora(&cfg, &run.ws)?;
            let path = run.out("manifest.json");
            corpora.wbc.manifest.write(&path)?;
            let c = &corpora.wbc.manifest.counts;
            log::info!("raw {} augmented {} train {} test {}", c.raw, c.augmented, c.train, c.test);
            Ok(vec![path])
        }
        Command::Train { ratio, one_stage, modulation: m } => {
            let strategy = if *one_stage { TrainingStrategy::OneStage } else { TrainingStrategy::TwoStage };
            let cell = Cell::image_free(*ratio, modulation(*m, cfg.seed), strategy);
            cell.validate()?;
            let mut corpora = load_corpora(&cfg, &run.ws)?;
            let (model, cached) = obtain_model(&cfg, &cell, &mut corpora, &run.ws)?;
            let ckpt = run.out("model.ckpt");
            save_checkpoint(&model, &ckpt)?;
            let (csv, summary) = report_paths(&cached);
            let mut report: TrainReport = match fs::read(&summary) {
                Ok(bytes) => serde_json::from_slice(&bytes)?,
                Err(_) => TrainReport { strategy: Some(strategy), ..TrainReport::default() },
            };
            let scores = evaluate_model(&model, &corpora.wbc.test, &cfg.noise)?;
            log::info!("test PA {:.2} DICE {:.2}", scores.pa, scores.dice);
            report.final_metrics = Some(FinalMetrics { pa: scores.pa, dice: scores.dice });
            report.checkpoint_path = Some(ckpt.clone());
            let (out_csv, out_summary) = (run.out("train_report.csv"), run.out("train_summary.json"));
            if csv.exists() {
                fs::copy(&csv, &out_csv)?;
            } else {
                fs::write(&out_csv, report.to_csv())?;
            }
            fs::write(&out_summary, serde_json::to_string_pretty(&report)?)?;
            Ok(vec![ckpt, out_csv, out_summary])
        }
        Command::Sweep => {
            let mut corpora = load_corpora(&cfg, &run.ws)?;
            let report = sweep(&cfg, &mut corpora, &run.ws)?;
            let written = report.write_outputs(&corpora.wbc.test, &run.dir)?;
            let failures = report.failures();
            if !failures.is_empty() {
                return Err(Error::Training(format!("{} of {} cells failed", failures.len(), report.outcomes.len())));
            }
            Ok(written)
        }
        Command::ExportPatterns { checkpoint, out } => {
            let model = load_checkpoint(checkpoint)?;
            let dir = out.clone().unwrap_or_else(|| run.out("patterns"));
            let manifest = export_bank(&model.bank()?, &dir)?;
            log::info!("{} patterns, bank {}", manifest.count, manifest.bank_digest);
            let mut files = spiseg::datasets::list_images(&dir)?;
            files.push(dir.join(&manifest.csv_file));
            files.push(dir.join(spiseg::sensing::export::MANIFEST_FILE));
            Ok(files)
        }
        Command::Infer { checkpoint, measurements, calibration, manifest, out } => {
            let model = load_checkpoint(checkpoint)?;
            let bank = model.bank()?;
            let manifest = match manifest {
                Some(p) => {
                    let m = BankManifest::read(p)?;
                    verify_manifest(&m, &bank)?;
                    m
                }
                None => BankManifest::for_bank(&bank),
            };
            let cal = match calibration {
                Some(p) => Calibration::read(p)?,
                None => Calibration::default(),
            };
            let recording = read_recording(measurements)?;
            let m = calibrate(&recording, &cal, &manifest, model.train_stats.as_ref())?;
            let map = model.network.infer_from_measurements(&m)?;
            let path = out.clone().unwrap_or_else(|| run.out("labels.png"));
            write_gray_png(&encode_palette(&map), &path)?;
            Ok(vec![path])
        }
        Command::Baseline { method, ratios, modulation: m, results } => {
            let method = match method {
                BaselineArg::Tvrec => Method::Tvrec,
                BaselineArg::Dlrec => Method::Dlrec,
            };
            run.cfg.cells = ratios.iter().map(|&r| Cell::baseline(r, method, modulation(*m, cfg.seed))).collect();
            let mut corpora = load_corpora(&run.cfg, &run.ws)?;
            let report = sweep(&run.cfg, &mut corpora, &run.ws)?;
            if let Some((cell, e)) = report.failures().first() {
                return Err(Error::Training(format!("{}: {e}", cell.label())));
            }
            write_rows(run, &report.rows(), results.as_ref())
        }
        Command::Eval { checkpoint, training, results } => {
            let model = load_checkpoint(checkpoint)?;
            let corpora = load_corpora(&cfg, &run.ws)?;
            let scores = evaluate_model(&model, &corpora.wbc.test, &cfg.noise)?;
            let (h, w) = model.network.config().scene_dims;
            let row = MetricRow {
                sampling_ratio: model.network.config().n_measurements as f64 / (h * w) as f64,
                method: Method::ImageFree.as_str().into(),
                modulation: model.modulation.strategy().as_str().into(),
                training: training.clone(),
                pa: scores.pa,
                dice: scores.dice,
                n_samples: scores.n_samples,
                seed: cfg.seed,
            };
            log::info!("PA {:.2} DICE {:.2} over {} samples", row.pa, row.dice, row.n_samples);
            write_rows(run, &[row], results.as_ref())
        }
    }
}

fn run_dir(parent: &Path, command: &str, digest: &str) -> std::io::Result<PathBuf> {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let dir = parent.join(format!("{command}-{}-{stamp}", &digest[..12]));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let fail = |code: u8, msg: String| {
        eprintln!("error: {msg}");
        ExitCode::from(code)
    };
    if let Some(name) = cli.common.preset.as_deref().filter(|n| !PRESETS.contains(n)) {
        return fail(2, format!("unknown preset `{name}` (known: {})", PRESETS.join(", ")));
    }
    let cfg = match load_config(&cli.common) {
        Ok(c) => c,
        Err(e) => return fail(exit_code(&e), e.to_string()),
    };
    if let Err(e) = cfg.validate() {
        return fail(exit_code(&e), e.to_string());
    }
    let dir = match run_dir(&cli.common.runs_dir, cli.command.name(), &cfg.digest()) {
        Ok(d) => d,
        Err(e) => return fail(3, format!("cannot create run directory: {e}")),
    };
    let log_path = dir.join("run.log");
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    match fs::File::create(&log_path) {
        Ok(f) => {
            env_logger::Builder::new()
                .filter_level(level)
                .target(env_logger::Target::Pipe(Box::new(Tee(Mutex::new(f)))))
                .init();
        }
        Err(e) => return fail(3, format!("cannot create {}: {e}", log_path.display())),
    }
    let mut run = Run { dir: dir.clone(), ws: Workspace::new(&cli.common.cache_dir), cfg };
    let outcome = execute(&cli.command, &mut run);
    let mut artifacts = outcome.as_ref().cloned().unwrap_or_default();
    let config_path = dir.join("config.toml");
    if let Ok(text) = run.cfg.to_toml() {
        if fs::write(&config_path, text).is_ok() && !artifacts.contains(&config_path) {
            artifacts.push(config_path);
        }
    }
    let code = match &outcome {
        Ok(_) => 0,
        Err(e) => exit_code(e),
    };
    let result = CommandResult { exit_code: code, artifacts, log_path, error: outcome.as_ref().err().map(|e| e.to_string()) };
    if let Ok(text) = serde_json::to_string_pretty(&result) {
        let _ = fs::write(dir.join("result.json"), text);
    }
    for a in &result.artifacts {
        println!("{}", a.display());
    }
    match outcome {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => fail(code, e.to_string()),
    }
}
