//! Regenerates the checked-in fuzz seeds under `fuzz/corpus/<target>/seed-*`.

use ndarray::Array2;
use spiseg::baselines::*;
use spiseg::datasets::*;
use spiseg::evaluation::*;
use spiseg::experiment::*;
use spiseg::measurement_io::*;
use spiseg::network::*;
use spiseg::sensing::export::*;
use spiseg::sensing::*;
use spiseg::training::*;
use std::fs;
use std::path::Path;

fn put(target: &str, name: &str, bytes: &[u8]) {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(format!("seed-{name}")), bytes).unwrap();
}

fn main() {
    let model = Model::new(NetworkConfig::miniature(), Modulation::Learned, 1).unwrap();
    let bank = model.bank().unwrap();
    put("checkpoint", "miniature", &checkpoint_to_bytes(&model).unwrap());
    let had = Model::new(NetworkConfig::miniature(), Modulation::Hadamard { ordering: HadamardOrdering::Sequency }, 1).unwrap();
    put("checkpoint", "hadamard", &checkpoint_to_bytes(&had).unwrap());

    let scenes: Vec<SceneImage> = (0..4)
        .map(|k| SceneImage::new(Array2::from_shape_fn((8, 8), |(r, c)| ((r * 3 + c * 5 + k) % 7) as f64 / 6.0)).unwrap())
        .collect();
    let m = simulate_measurements(&scenes[0], &bank, &NoiseModel::None).unwrap();
    let mut rec = RawRecording::from_measurements(&m);
    put("recording_csv", "plain", recording_to_string(&rec).unwrap().as_bytes());
    rec.dark_level = 0.125;
    rec.device_meta.push(("device".into(), "bench-1".into()));
    put("recording_csv", "meta", recording_to_string(&rec).unwrap().as_bytes());
    put("recording_csv", "shuffled", b"pattern_index,value\n2,0.5\n0,1e-3\n1,-4\n");

    let manifest = BankManifest::for_bank(&bank);
    let json = serde_json::to_string_pretty(&manifest).unwrap();
    put("bank_manifest", "miniature", json.as_bytes());
    let mut joined = json.into_bytes();
    joined.push(0);
    joined.extend(bank_to_csv(&bank).into_bytes());
    put("pattern_csv", "miniature", &joined);

    let samples: Vec<LabeledSample> = scenes
        .iter()
        .enumerate()
        .map(|(k, s)| LabeledSample {
            scene: s.clone(),
            labels: SegmentationMap::new(s.pixels().mapv(|v| u8::from(v > 0.5)), 2).unwrap(),
            source_id: format!("s{k}"),
            augmentation_tag: "r0".into(),
        })
        .collect();
    let ds = PreparedDataset {
        manifest: DatasetManifest {
            name: "mini".into(),
            class_names: vec!["background".into(), "foreground".into()],
            counts: Counts { raw: 4, augmented: 4, train: 3, test: 1 },
            split_seed: 0,
            provenance: vec![],
        },
        train: samples[..3].to_vec(),
        test: samples[3..].to_vec(),
    };
    put("dataset_cache", "mini", &ds.to_bytes().unwrap());

    let mut scfg = SegmenterConfig::default();
    scfg.head = SegHeadConfig { depth: 2, base_channels: 2, convs_per_node: 1 };
    scfg.schedule.epochs = 1;
    let (seg, _) = image_segmenter_train(&samples, &scfg).unwrap();
    put("segmenter", "mini", &seg.to_bytes().unwrap());

    let mut dcfg = DlRecConfig::default();
    dcfg.width = 2;
    dcfg.schedule.epochs = 1;
    let (dl, _) = dlrec_train(&scenes, &bank, &dcfg).unwrap();
    put("dlrec", "mini", &dl.to_bytes().unwrap());

    let cal = Calibration { dark_level: 0.5, scale: 2.0, normalization: Normalization::MaxOne };
    put("calibration_toml", "max_one", cal.to_toml().unwrap().as_bytes());
    put("calibration_toml", "default", b"");

    for name in PRESETS {
        put("experiment_toml", name, preset(name).unwrap().to_toml().unwrap().as_bytes());
    }

    let row = MetricRow {
        sampling_ratio: 0.01,
        method: "image_free".into(),
        modulation: "learned".into(),
        training: "two_stage".into(),
        pa: 93.5,
        dice: 72.25,
        n_samples: 900,
        seed: 0,
    };
    put("results_csv", "one_row", rows_to_csv(&[row], true).unwrap().as_bytes());
}
