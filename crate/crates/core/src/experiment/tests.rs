use super::*;
use crate::network::{FsrcnnConfig, SegHeadConfig};
use crate::sensing::HadamardOrdering;
use crate::training::StageConfig;

#[test]
fn preset_shapes() {
    assert_eq!(preset("table1").unwrap().cells.len(), 10);
    let t2 = preset("table2").unwrap();
    assert_eq!(t2.cells.len(), 12);
    assert!(t2.cells.iter().all(|c| c.method == Method::ImageFree && c.training == Some(TrainingStrategy::TwoStage)));
    assert!(preset("fig4").unwrap().cells.iter().any(|c| c.method == Method::Dlrec));
    for name in PRESETS {
        let p = preset(name).unwrap();
        p.resolved().validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&p.to_toml().unwrap()).unwrap(), p);
    }
    assert!(matches!(preset("table9"), Err(Error::Config(_))));
}

#[test]
fn toml_cells_and_validation() {
    let text = r#"
name = "mini"
seed = 3
[network.seg_head]
base_channels = 8
[[cells]]
ratio = 0.01
method = "image_free"
training = "one_stage"
[[cells]]
ratio = 0.05
method = "tvrec"
modulation = { kind = "hadamard", ordering = "sequency" }
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.network.seg_head.base_channels, 8);
    assert_eq!(cfg.network.seg_head.depth, 2);
    assert_eq!(cfg.cells[0].modulation, Modulation::Learned);
    assert_eq!(cfg.cells[1].modulation, Modulation::Hadamard { ordering: HadamardOrdering::Sequency });
    cfg.validate().unwrap();
    let r = cfg.resolved();
    assert_eq!((r.train.seed, r.segmenter.seed, r.baseline.dlrec.seed), (3, 3, 3));
    assert_eq!(cfg.network_for(0.01).unwrap().n_measurements, 40);

    assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    let bad = [
        Cell { ratio: 0.0, ..Cell::clean_image() },
        Cell { training: None, ..Cell::image_free(0.1, Modulation::Learned, TrainingStrategy::OneStage) },
        Cell::baseline(0.1, Method::Tvrec, Modulation::Learned),
        Cell { training: Some(TrainingStrategy::TwoStage), ..Cell::clean_image() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn digest_tracks_every_field() {
    let base = preset("table2").unwrap();
    let d0 = base.digest();
    assert_eq!(d0, preset("table2").unwrap().digest());
    let mut edits: Vec<ExperimentConfig> = Vec::new();
    let mut c = base.clone();
    c.seed = 1;
    edits.push(c);
    let mut c = base.clone();
    c.train.stage2.lr0 = 2e-3;
    edits.push(c);
    let mut c = base.clone();
    c.network.fsrcnn.d = 40;
    edits.push(c);
    let mut c = base.clone();
    c.cells.pop();
    edits.push(c);
    let mut c = base.clone();
    c.baseline.tv.lambda = 0.5;
    edits.push(c);
    for e in edits {
        assert_ne!(e.digest(), d0);
    }
    // nested seeds are derived from the top-level one
    let mut c = base.clone();
    c.train.seed = 99;
    assert_eq!(c.digest(), d0);
}

fn tiny_config(root: &Path) -> ExperimentConfig {
    let quick = |epochs| StageConfig { dataset_id: "t".into(), lr0: 2e-3, decay: 0.8, decay_every: 20, epochs };
    let mut cfg = ExperimentConfig {
        name: "tiny".into(),
        seed: 1,
        data: DataConfig {
            wbc_root: root.join("wbc"),
            natural_root: root.join("natural"),
            quarter: false,
            natural_count: 6,
            synthesize: true,
        },
        panel_samples: 2,
        ..ExperimentConfig::default()
    };
    cfg.network.fsrcnn = FsrcnnConfig { d: 4, s: 2, m: 1, kernel_sizes: [3, 1, 3, 1, 9] };
    cfg.network.seg_head = SegHeadConfig { depth: 2, base_channels: 2, convs_per_node: 1 };
    cfg.train.stage1 = quick(1);
    cfg.train.stage2 = quick(1);
    cfg.train.batch_size = 16;
    cfg.segmenter.head = cfg.network.seg_head.clone();
    cfg.segmenter.schedule = quick(1);
    cfg.baseline.tv.max_iters = 5;
    cfg
}

#[test]
fn tiny_sweep_caches_and_survives_failures() {
    let dir = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(data.path());
    crate::datasets::synthetic::write_synthetic_wbc(&cfg.data.wbc_root, 2, 0).unwrap();
    let ws = Workspace::new(dir.path());
    cfg.cells = vec![
        Cell::image_free(0.01, Modulation::Learned, TrainingStrategy::TwoStage),
        Cell::clean_image(),
        Cell::baseline(0.01, Method::Tvrec, Modulation::Hadamard { ordering: HadamardOrdering::Sequency }),
    ];
    let mut corpora = load_corpora(&cfg, &ws).unwrap();
    assert_eq!(corpora.wbc.manifest.counts.raw, 2);
    let first = sweep(&cfg, &mut corpora, &ws).unwrap();
    assert!(first.failures().is_empty(), "{:?}", first.failures());
    assert!(first.outcomes.iter().all(|o| !o.cached));
    let rows = first.rows();
    assert_eq!(rows.len(), 3);
    assert_eq!((rows[0].method.as_str(), rows[0].modulation.as_str(), rows[0].training.as_str()), ("image_free", "learned", "two_stage"));
    assert_eq!((rows[1].method.as_str(), rows[1].modulation.as_str()), ("clean_image", "none"));
    assert!(rows.iter().all(|r| (0.0..=100.0).contains(&r.pa) && r.seed == 1));

    let again = sweep(&cfg, &mut corpora, &ws).unwrap();
    assert!(again.outcomes.iter().all(|o| o.cached));
    assert_eq!(again.rows(), rows);

    let out = dir.path().join("out");
    let files = first.write_outputs(&corpora.wbc.test, &out).unwrap();
    for name in ["results.csv", "table.txt", "table.md", "config.toml", "panels.png"] {
        assert!(files.contains(&out.join(name)), "{name}");
    }
    assert_eq!(crate::evaluation::rows_from_csv(&std::fs::read_to_string(out.join("results.csv")).unwrap()).unwrap(), rows);

    // an unsatisfiable cell fails alone
    let mut broken = cfg.clone();
    broken.data.natural_count = 500;
    broken.cells.insert(0, Cell::image_free(0.05, Modulation::Learned, TrainingStrategy::TwoStage));
    let mut corpora = load_corpora(&broken, &ws).unwrap();
    let report = sweep(&broken, &mut corpora, &ws).unwrap();
    assert_eq!(report.failures().len(), 2);
    assert_eq!(report.rows().len(), 2);
    assert!(report.outcomes[2].cached && report.outcomes[3].cached);

    let empty = ExperimentConfig { cells: vec![], ..cfg.clone() };
    assert!(matches!(sweep(&empty, &mut corpora, &ws), Err(Error::Config(_))));
}

#[test]
fn missing_root_is_an_ingestion_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.data.synthesize = false;
    assert!(matches!(load_corpora(&cfg, &Workspace::new(dir.path())), Err(Error::Ingestion { .. })));
}
