use super::*;
use crate::network::NetworkConfig;
use crate::sensing::{make_random_patterns, simulate_clean, NoiseModel, SceneImage};
use crate::training::{Model, Modulation};
use crate::seeds;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

fn manifest_for(n: usize) -> (PatternBank, BankManifest) {
    let bank = make_random_patterns(n, (8, 8), 5).unwrap();
    let m = BankManifest::for_bank(&bank);
    (bank, m)
}

#[test]
fn forty_rows_shuffled_are_sorted() {
    let mut rng = seeds::rng(1, "rows", 0);
    let values: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..3.0)).collect();
    let mut order: Vec<usize> = (0..40).collect();
    order.reverse();
    order.swap(3, 17);
    let mut text = String::from("# device: bench\npattern_index,value\n");
    for i in order {
        text.push_str(&format!("{i},{}\n", values[i]));
    }
    let rec = parse_recording(&text).unwrap();
    assert_eq!(rec.len(), 40);
    assert_eq!(rec.values, values);
    assert_eq!(rec.device_meta, vec![("device".to_string(), "bench".to_string())]);
    assert_eq!(rec.dark_level, 0.0);
}

#[test]
fn malformed_rows_name_their_line() {
    let dup = "pattern_index,value\n0,1\n7,2\n1,0.5\n7,3\n";
    match parse_recording(dup) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 5);
            assert!(message.contains("duplicate pattern index 7"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_recording("pattern_index,value\n0,1\n1,volts\n"), Err(Error::Parse { line: 3, .. })));
    assert!(matches!(parse_recording("index,value\n0,1\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_recording(""), Err(Error::Parse { .. })));
    assert!(matches!(parse_recording("pattern_index,value\n0,1\n2,1\n"), Err(Error::Parse { line: 3, .. })));
    assert!(matches!(parse_recording("pattern_index,value\n0,NaN\n"), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(parse_recording("# dark\npattern_index,value\n0,1\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(parse_recording("pattern_index,value\n"), Err(Error::Parse { .. })));
}

proptest! {
    #[test]
    fn read_write_read_is_bit_exact(
        values in prop::collection::vec(-1e6f64..1e6, 1..60),
        dark in -10.0f64..10.0,
        meta in prop::collection::vec(("[a-z][a-z_]{0,8}", "[a-zA-Z0-9 .]{0,12}"), 0..4),
    ) {
        let meta: Vec<(String, String)> = meta
            .into_iter()
            .filter(|(k, _)| k != DARK_LEVEL_KEY)
            .map(|(k, v)| (k, v.trim().to_string()))
            .collect();
        let rec = RawRecording { values, device_meta: meta, dark_level: dark };
        let text = recording_to_string(&rec).unwrap();
        let back = parse_recording(&text).unwrap();
        prop_assert_eq!(&back, &rec);
        prop_assert!(back.values.iter().zip(&rec.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(recording_to_string(&back).unwrap(), text);
    }

    #[test]
    fn calibration_is_affine_equivariant(
        values in prop::collection::vec(-5.0f64..5.0, 6),
        a in 0.1f64..10.0,
        b in -3.0f64..3.0,
        mode in 0usize..2,
    ) {
        let (_, manifest) = manifest_for(6);
        let normalization = [Normalization::None, Normalization::MaxOne][mode];
        let base = Calibration { dark_level: 0.0, scale: 1.0, normalization };
        let distorted: Vec<f64> = values.iter().map(|v| a * v + b).collect();
        let inverse = Calibration { dark_level: b, scale: 1.0 / a, normalization };
        let x = calibrate(&RawRecording::new(values), &base, &manifest, None).unwrap();
        let y = calibrate(&RawRecording::new(distorted), &inverse, &manifest, None).unwrap();
        for (p, q) in x.values.iter().zip(&y.values) {
            prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
        }
    }
}

#[test]
fn calibration_basics() {
    let (_, manifest) = manifest_for(4);
    let rec = RawRecording::new(vec![0.3, 0.3, 0.3, 0.3]);
    let none = Calibration { dark_level: 0.3, scale: 1.0, normalization: Normalization::None };
    assert_eq!(calibrate(&rec, &none, &manifest, None).unwrap().values, vec![0.0; 4]);
    let rec = RawRecording::new(vec![1.0, 2.0, -1.0, 0.5]);
    let base = Calibration { dark_level: 0.5, normalization: Normalization::None, ..Calibration::default() };
    let doubled = Calibration { scale: 2.0, ..base.clone() };
    let x = calibrate(&rec, &base, &manifest, None).unwrap();
    let y = calibrate(&rec, &doubled, &manifest, None).unwrap();
    assert_eq!(y.values, x.values.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
    assert_eq!(x.domain, MeasurementDomain::Raw);
    assert_eq!(x.bank_id.as_deref(), Some(manifest.bank_digest.as_str()));
    let max_one = Calibration { normalization: Normalization::MaxOne, ..base.clone() };
    assert_eq!(calibrate(&rec, &max_one, &manifest, None).unwrap().values, vec![0.5 / 1.5, 1.0, -1.0, 0.0]);

    let z = Calibration { normalization: Normalization::ZscoreTrainStats, ..base.clone() };
    assert!(matches!(calibrate(&rec, &z, &manifest, None), Err(Error::Calibration(_))));
    let stats = MeasurementNorm { mean: vec![0.5, 1.5, -1.5, 0.0], std: vec![1.0, 2.0, 0.5, 4.0] };
    let s = calibrate(&rec, &z, &manifest, Some(&stats)).unwrap();
    assert_eq!(s.domain, MeasurementDomain::Standardized);
    assert_eq!(s.values, vec![0.0, 0.0, 0.0, 0.0]);
    assert!(matches!(calibrate(&rec, &z, &manifest, Some(&MeasurementNorm::identity(3))), Err(Error::Calibration(_))));

    let (_, other) = manifest_for(5);
    match calibrate(&rec, &base, &other, None) {
        Err(Error::Shape(msg)) => assert!(msg.contains("expects 5"), "{msg}"),
        r => panic!("{r:?}"),
    }
    assert!(Calibration { scale: 0.0, ..base }.validate().is_err());
}

#[test]
fn calibration_toml_round_trip() {
    let cal = Calibration { dark_level: 0.0125, scale: 3.5, normalization: Normalization::MaxOne };
    assert_eq!(Calibration::from_toml(&cal.to_toml().unwrap()).unwrap(), cal);
    let d = Calibration::from_toml("scale = 2.0\n").unwrap();
    assert_eq!(d.normalization, Normalization::ZscoreTrainStats);
    assert!(Calibration::from_toml("scale = -1.0\n").is_err());
    assert!(Calibration::from_toml("gain = 1.0\n").is_err());
    assert!(Calibration::from_toml("normalization = \"l2\"\n").is_err());
}

#[test]
fn inverse_affine_matches_simulation() {
    let (bank, manifest) = manifest_for(12);
    let mut rng = seeds::rng(3, "scene", 0);
    let scene = Array2::from_shape_fn((8, 8), |_| rng.random::<f64>());
    let clean = simulate_clean(scene.view(), &bank).unwrap();
    let (gain, offset) = (0.037, 0.42);
    let rec = RawRecording {
        values: clean.iter().map(|v| gain * v + offset).collect(),
        device_meta: vec![("unit".into(), "volt".into())],
        dark_level: offset,
    };
    let text = recording_to_string(&rec).unwrap();
    let cal = Calibration { dark_level: offset, scale: 1.0 / gain, normalization: Normalization::None };
    let m = calibrate(&parse_recording(&text).unwrap(), &cal, &manifest, None).unwrap();
    for (a, b) in m.values.iter().zip(&clean) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
    }
    verify_manifest(&manifest, &bank).unwrap();
    let (other, _) = manifest_for(11);
    assert!(matches!(verify_manifest(&manifest, &other), Err(Error::Digest { .. })));
}

#[test]
fn recorded_path_matches_in_process_inference() {
    let mut model = Model::new(NetworkConfig::miniature(), Modulation::Learned, 4).unwrap();
    let bank = model.bank().unwrap();
    let scenes: Vec<SceneImage> = (0..6)
        .map(|k| {
            let mut rng = seeds::rng(k, "scene", 0);
            SceneImage::new(Array2::from_shape_fn((8, 8), |_| rng.random::<f64>())).unwrap()
        })
        .collect();
    let raw: Vec<Vec<f64>> = scenes.iter().map(|s| simulate_clean(s.pixels(), &bank).unwrap()).collect();
    let stats = MeasurementNorm::from_samples(&raw).unwrap();
    model.network.set_input_norm(stats.clone()).unwrap();
    model.train_stats = Some(stats);
    let manifest = BankManifest::for_bank(&bank);
    let dir = tempfile::tempdir().unwrap();
    for (k, scene) in scenes.iter().enumerate() {
        let m = crate::sensing::simulate_measurements(scene, &bank, &NoiseModel::None).unwrap();
        let expected = model.network.infer_from_measurements(&m).unwrap();
        let path = dir.path().join(format!("rec{k}.csv"));
        write_recording(&path, &RawRecording::from_measurements(&m)).unwrap();
        for cal in [
            Calibration::default(),
            Calibration { normalization: Normalization::None, ..Calibration::default() },
        ] {
            let v = calibrate(&read_recording(&path).unwrap(), &cal, &manifest, model.train_stats.as_ref()).unwrap();
            assert_eq!(model.network.infer_from_measurements(&v).unwrap(), expected);
        }
    }
}
