use super::*;
use crate::network::SegHeadConfig;
use crate::sensing::{make_hadamard_patterns, make_random_patterns, HadamardOrdering, MeasurementVector, Strategy};
use crate::seeds;
use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;
use rand::Rng;

fn blob_scene(seed: u64, n: usize) -> (Array2<f64>, Array2<u8>) {
    let mut rng = seeds::rng(seed, "test-blob", 0);
    let (cy, cx) = (rng.random_range(0.3..0.7) * n as f64, rng.random_range(0.3..0.7) * n as f64);
    let r = rng.random_range(0.2..0.35) * n as f64;
    let labels = Array2::from_shape_fn((n, n), |(i, j)| {
        let d = ((i as f64 - cy).powi(2) + (j as f64 - cx).powi(2)).sqrt();
        if d < 0.5 * r {
            2
        } else if d < r {
            1
        } else {
            0
        }
    });
    (labels.mapv(|l| [0.8, 0.55, 0.25][l as usize]), labels)
}

fn samples(n: usize, count: usize, offset: u64) -> Vec<LabeledSample> {
    (0..count)
        .map(|i| {
            let (img, lbl) = blob_scene(offset + i as u64, n);
            LabeledSample {
                scene: SceneImage::new(img).unwrap(),
                labels: SegmentationMap::new(lbl, 3).unwrap(),
                source_id: format!("b{i}"),
                augmentation_tag: "raw".into(),
            }
        })
        .collect()
}

fn psnr(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mse = (a - b).mapv(|v| v * v).mean().unwrap();
    10.0 * (1.0 / mse).log10()
}

fn measure(scene: &Array2<f64>, bank: &PatternBank) -> MeasurementVector {
    simulate_measurements(&SceneImage::new(scene.clone()).unwrap(), bank, &NoiseModel::None).unwrap()
}

fn delta_bank(n: usize) -> PatternBank {
    let patterns = (0..n * n)
        .map(|k| {
            let mut p = Array2::zeros((n, n));
            p[[k / n, k % n]] = 1.0;
            p
        })
        .collect();
    PatternBank::new(patterns, Strategy::Random, 0).unwrap()
}

#[test]
fn identity_sampling_recovers_scene() {
    let (scene, _) = blob_scene(3, 32);
    let bank = delta_bank(32);
    let cfg = TvConfig { lambda: 1e-6, ..TvConfig::default() };
    let rec = tv_reconstruct(&measure(&scene, &bank), &bank, &cfg).unwrap();
    assert!(psnr(&rec.pixels, &scene) >= 40.0, "{}", psnr(&rec.pixels, &scene));
}

#[test]
fn full_hadamard_recovers_scene() {
    let (scene, _) = blob_scene(5, 16);
    let bank = make_hadamard_patterns(256, (16, 16), HadamardOrdering::Natural).unwrap();
    let rec = tv_reconstruct(&measure(&scene, &bank), &bank, &TvConfig { lambda: 1e-5, ..TvConfig::default() }).unwrap();
    assert!(psnr(&rec.pixels, &scene) >= 40.0);
}

#[test]
fn constant_scene_is_a_fixed_point() {
    let scene = Array2::from_elem((12, 12), 0.4);
    let bank = make_random_patterns(20, (12, 12), 8).unwrap();
    let m = measure(&scene, &bank);
    let problem = TvProblem::new(&bank).unwrap();
    let b = problem.rhs(&m).unwrap();
    assert!(problem.objective(&scene, &b, 0.05, TvKind::Anisotropic) < 1e-20);
    let cfg = TvConfig { lambda: 0.05, max_iters: 3000, tol: 1e-12, ..TvConfig::default() };
    let rec = problem.solve(&m, &cfg).unwrap();
    let last = *rec.objective_trace.last().unwrap();
    assert!(last < 1e-8 * rec.objective_trace[0].max(1.0), "{last}");
    assert!(rec.pixels.iter().all(|v| (v - 0.4).abs() < 1e-3), "{:?}", rec.pixels.iter().fold(0.0f64, |m, v| m.max((v - 0.4).abs())));
}

#[test]
fn data_gradient_matches_finite_differences() {
    let bank = make_random_patterns(10, (8, 8), 2).unwrap();
    let problem = TvProblem::new(&bank).unwrap();
    let (scene, _) = blob_scene(1, 8);
    let b = problem.rhs(&measure(&scene, &bank)).unwrap();
    let x = Array2::from_shape_fn((8, 8), |(i, j)| ((i * 3 + j * 5) % 7) as f64 / 7.0);
    let g = problem.data_gradient(&x, &b);
    let eps = 1e-6;
    for (i, j) in [(0, 0), (3, 4), (7, 7), (5, 1)] {
        let mut xp = x.clone();
        xp[[i, j]] += eps;
        let mut xm = x.clone();
        xm[[i, j]] -= eps;
        let fd = (problem.data_term(&xp, &b) - problem.data_term(&xm, &b)) / (2.0 * eps);
        assert!((fd - g[[i, j]]).abs() <= 1e-6 * g[[i, j]].abs().max(1e-3), "{fd} vs {}", g[[i, j]]);
    }
}

#[test]
fn total_variation_hand_values() {
    let x = ndarray::array![[0.0, 1.0], [1.0, 1.0]];
    assert_eq!(total_variation(&x, TvKind::Anisotropic), 2.0);
    assert!((total_variation(&x, TvKind::Isotropic) - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(total_variation(&Array2::from_elem((4, 4), 0.3), TvKind::Isotropic), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn objective_trace_is_monotone(seed in 0u64..1000, n_meas in 3usize..40, iso in any::<bool>(), back in any::<bool>()) {
        let bank = make_random_patterns(n_meas, (10, 10), seed).unwrap();
        let (scene, _) = blob_scene(seed, 10);
        let cfg = TvConfig {
            lambda: 0.02,
            max_iters: 60,
            tv_kind: if iso { TvKind::Isotropic } else { TvKind::Anisotropic },
            step_rule: if back { StepRule::Backtracking } else { StepRule::Fixed },
            ..TvConfig::default()
        };
        let rec = tv_reconstruct(&measure(&scene, &bank), &bank, &cfg).unwrap();
        prop_assert!(rec.objective_trace.iter().all(|v| v.is_finite()));
        for w in rec.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0], "{} > {}", w[1], w[0]);
        }
        prop_assert!(rec.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn tv_is_deterministic_and_checks_lengths() {
    let bank = make_random_patterns(12, (8, 8), 4).unwrap();
    let (scene, _) = blob_scene(9, 8);
    let m = measure(&scene, &bank);
    let cfg = TvConfig::default();
    assert_eq!(tv_reconstruct(&m, &bank, &cfg).unwrap(), tv_reconstruct(&m, &bank, &cfg).unwrap());
    let short = MeasurementVector::raw(m.values[..5].to_vec());
    assert!(matches!(tv_reconstruct(&short, &bank, &cfg), Err(Error::Shape(_))));
    assert!(TvConfig { lambda: 0.0, ..cfg }.validate().is_err());
}

fn small_dlrec_cfg(epochs: usize) -> DlRecConfig {
    DlRecConfig {
        width: 4,
        schedule: crate::training::StageConfig { dataset_id: "t".into(), lr0: 2e-3, decay: 0.8, decay_every: 20, epochs },
        batch_size: 8,
        ..DlRecConfig::default()
    }
}

#[test]
fn dlrec_training_reduces_error() {
    let data = samples(8, 48, 100);
    let scenes: Vec<SceneImage> = data.iter().map(|s| s.scene.clone()).collect();
    let bank = make_random_patterns(6, (8, 8), 1).unwrap();
    let (rec, records) = dlrec_train(&scenes, &bank, &small_dlrec_cfg(30)).unwrap();
    assert_eq!(records.len(), 30);
    assert!(records.last().unwrap().loss < records[0].loss);
    let out = dlrec_reconstruct(&measure(&scenes[0].pixels().to_owned(), &bank), &rec).unwrap();
    assert_eq!(out.pixels.dim(), (8, 8));
    assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    let back = DlReconstructor::from_bytes(&rec.to_bytes().unwrap()).unwrap();
    let m = measure(&scenes[3].pixels().to_owned(), &bank);
    assert_eq!(back.reconstruct(&m).unwrap(), rec.reconstruct(&m).unwrap());
    assert!(rec.reconstruct(&MeasurementVector::raw(vec![0.0; 5])).is_err());
}

#[test]
fn dlrec_gradients_match_finite_differences() {
    let (mut r, input) = dlrec::gradient_check_instance();
    let target = Array3::from_shape_fn((1, 4, 4), |(_, i, j)| ((i + 2 * j) % 5) as f32 / 5.0);
    let (_, g) = dlrec::loss_and_grads(&r, &input, &target);
    let eps = 1e-2f32;
    for t in 0..g.tensors.len() {
        for k in [0usize, 1] {
            if k >= g.tensors[t].len() {
                continue;
            }
            let orig = dlrec::params_mut(&mut r).params_mut()[t].value.as_slice_mut().unwrap()[k];
            let mut eval = |v: f32| {
                dlrec::params_mut(&mut r).params_mut()[t].value.as_slice_mut().unwrap()[k] = v;
                dlrec::loss_and_grads(&r, &input, &target).0
            };
            let fd = (eval(orig + eps) - eval(orig - eps)) / (2.0 * eps as f64);
            eval(orig);
            let an = g.tensors[t].as_slice().unwrap()[k] as f64;
            assert!((fd - an).abs() <= 2e-2 * an.abs().max(1e-2), "tensor {t}[{k}]: {fd} vs {an}");
        }
    }
}

fn small_segmenter_cfg(epochs: usize) -> SegmenterConfig {
    SegmenterConfig {
        head: SegHeadConfig { depth: 2, base_channels: 4, convs_per_node: 1 },
        schedule: crate::training::StageConfig { dataset_id: "t".into(), lr0: 3e-3, decay: 0.8, decay_every: 20, epochs },
        batch_size: 8,
        ..SegmenterConfig::default()
    }
}

#[test]
fn segmenter_contract() {
    let train = samples(16, 24, 0);
    let (seg, records) = image_segmenter_train(&train, &small_segmenter_cfg(15)).unwrap();
    assert!(records.last().unwrap().loss < records[0].loss);
    let img = train[0].scene.pixels();
    let a = seg.segment(img).unwrap();
    assert_eq!(a.dims(), (16, 16));
    assert_eq!(a, seg.segment(img).unwrap());
    let back = ImageSegmenter::from_bytes(&seg.to_bytes().unwrap()).unwrap();
    assert_eq!(back.scores(img).unwrap(), seg.scores(img).unwrap());
    let mut mixed = train.clone();
    mixed[1].labels = SegmentationMap::new(Array2::zeros((16, 16)), 2).unwrap();
    assert!(image_segmenter_train(&mixed, &small_segmenter_cfg(1)).is_err());
    assert!(seg.segment(Array2::zeros((8, 8)).view()).is_err());
}

#[test]
fn pipeline_rows_and_clean_bound() {
    let train = samples(16, 24, 0);
    let test = samples(16, 6, 500);
    let (seg, _) = image_segmenter_train(&train, &small_segmenter_cfg(20)).unwrap();
    let hadamard = Modulation::Hadamard { ordering: HadamardOrdering::Sequency };
    let cfg = BaselineConfig { tv: TvConfig { lambda: 1e-4, ..TvConfig::default() }, ..BaselineConfig::default() };
    let none = NoiseModel::None;
    assert!(run_baseline_pipeline(&train, &test, &[], BaselineMethod::Tvrec, &hadamard, &cfg, &seg, &none, 1).unwrap().is_empty());
    let rows = run_baseline_pipeline(&train, &test, &[1.0, 0.05], BaselineMethod::Tvrec, &hadamard, &cfg, &seg, &none, 1).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].method.as_str(), rows[0].modulation.as_str(), rows[0].training.as_str()), ("tvrec", "hadamard", "none"));
    let clean = evaluate(&CleanImage(&seg), &test, &none).unwrap();
    assert!((rows[0].dice - clean.dice).abs() < 2.0, "{} vs {}", rows[0].dice, clean.dice);
    assert!(run_baseline_pipeline(&train, &test, &[0.1], BaselineMethod::Tvrec, &Modulation::Learned, &cfg, &seg, &none, 1).is_err());
    assert!("xyz".parse::<BaselineMethod>().is_err());
    let dl = BaselineConfig { dlrec: small_dlrec_cfg(2), ..BaselineConfig::default() };
    let rows = run_baseline_pipeline(&train, &test, &[0.05], BaselineMethod::Dlrec, &Modulation::Random { seed: 3 }, &dl, &seg, &none, 1).unwrap();
    assert_eq!((rows[0].method.as_str(), rows[0].modulation.as_str()), ("dlrec", "random"));
}

#[test]
fn containers_reject_tampering() {
    let train = samples(16, 4, 0);
    let (seg, _) = image_segmenter_train(&train, &small_segmenter_cfg(1)).unwrap();
    let mut bytes = seg.to_bytes().unwrap();
    let k = bytes.len() / 2;
    bytes[k] ^= 4;
    assert!(matches!(ImageSegmenter::from_bytes(&bytes), Err(Error::Digest { .. })));
    assert!(DlReconstructor::from_bytes(&seg.to_bytes().unwrap()).is_err());
    let _ = Array1::<f64>::zeros(1);
}
