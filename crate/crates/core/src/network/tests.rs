use super::*;
use ndarray::Array2;
use rand::Rng;

use crate::seeds;

fn scene(dims: (usize, usize), seed: u64) -> Array2<f64> {
    let mut rng = seeds::rng(seed, "net-test", 0);
    Array2::from_shape_fn(dims, |_| rng.random::<f64>())
}

fn labels(dims: (usize, usize), seed: u64, c: usize) -> Array2<u8> {
    let mut rng = seeds::rng(seed, "net-labels", 0);
    Array2::from_shape_fn(dims, |_| rng.random_range(0..c) as u8)
}

fn total_loss(net: &Network<f64>, x: &Array2<f64>, y: &Array3<f64>) -> f64 {
    let tr = net.forward_trace(x.view(), ForwardDepth::Scores).unwrap();
    let target = x.clone().insert_axis(Axis(0));
    mse(&tr.feature_map, &target).0 + mse(tr.scores.as_ref().unwrap(), y).0
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let mut net = Network::<f64>::new(NetworkConfig::miniature(), 5).unwrap();
    let mut norm = MeasurementNorm::identity(4);
    norm.mean = vec![0.3, -0.2, 0.1, 0.0];
    norm.std = vec![1.5, 0.7, 2.0, 1.0];
    net.set_input_norm(norm).unwrap();
    let x = scene((8, 8), 1);
    let y: Array3<f64> = one_hot(&labels((8, 8), 2, 2), 2);

    let tr = net.forward_trace(x.view(), ForwardDepth::Scores).unwrap();
    let target = x.clone().insert_axis(Axis(0));
    let (_, d_fm) = mse(&tr.feature_map, &target);
    let (_, d_s) = mse(tr.scores.as_ref().unwrap(), &y);
    let mut grads = net.params().zero_grads();
    net.backward(&tr, Some(&d_fm), Some(&d_s), &mut grads, true);

    let h = 1e-6;
    let mut worst = 0.0f64;
    for pi in 0..net.params().len() {
        // a sample of entries per tensor keeps the check fast
        let n = net.params().params()[pi].value.len();
        for j in (0..n).step_by((n / 7).max(1)) {
            let orig = net.params().params()[pi].value.as_slice().unwrap()[j];
            net.params_mut().params_mut()[pi].value.as_slice_mut().unwrap()[j] = orig + h;
            let lp = total_loss(&net, &x, &y);
            net.params_mut().params_mut()[pi].value.as_slice_mut().unwrap()[j] = orig - h;
            let lm = total_loss(&net, &x, &y);
            net.params_mut().params_mut()[pi].value.as_slice_mut().unwrap()[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.tensors[pi].as_slice().unwrap()[j];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            worst = worst.max(err);
            assert!(err < 1e-4, "{} [{j}]: fd {fd} analytic {an}", net.params().params()[pi].name);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn encoder_gradient_skipped_when_frozen() {
    let net = Network::<f64>::new(NetworkConfig::miniature(), 1).unwrap();
    let x = scene((8, 8), 3);
    let tr = net.forward_trace(x.view(), ForwardDepth::FeatureMap).unwrap();
    let (_, d) = mse(&tr.feature_map, &x.clone().insert_axis(Axis(0)));
    let mut g = net.params().zero_grads();
    net.backward(&tr, Some(&d), None, &mut g, false);
    assert!(g.get(net.encoder).iter().all(|&v| v == 0.0));
    assert!(g.get(net.expansion.weight).iter().any(|&v| v != 0.0));
}

#[test]
fn encode_matches_forward_model() {
    let net = Network::<f64>::new(NetworkConfig::miniature(), 9).unwrap();
    let x = scene((8, 8), 4);
    let m = net.encode(&SceneImage::new(x.clone()).unwrap()).unwrap();
    let filters = net.encoder_weights();
    for (i, got) in m.values.iter().enumerate() {
        let mut want = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                want += filters.filters()[[i, r, c]] * x[[r, c]];
            }
        }
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn full_and_measurement_paths_agree() {
    let net = Network::<f32>::new(NetworkConfig::miniature(), 2).unwrap();
    let img = SceneImage::new(scene((8, 8), 7)).unwrap();
    let a = net.forward(&img).unwrap().argmax();
    let b = net.infer_from_measurements(&net.encode(&img).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn folding_normalization_preserves_outputs() {
    let mut net = Network::<f64>::new(NetworkConfig::miniature(), 4).unwrap();
    let img = SceneImage::new(scene((8, 8), 8)).unwrap();
    let before = net.forward(&img).unwrap().scores;
    net.fold_input_norm(MeasurementNorm { mean: vec![1.0, -2.0, 0.5, 3.0], std: vec![2.0, 0.5, 1.0, 4.0] })
        .unwrap();
    let mid = net.forward(&img).unwrap().scores;
    net.fold_input_norm(MeasurementNorm::identity(4)).unwrap();
    let after = net.forward(&img).unwrap().scores;
    for ((a, b), c) in before.iter().zip(&mid).zip(&after) {
        assert!((a - b).abs() < 1e-9 && (a - c).abs() < 1e-9);
    }
}

#[test]
fn standardized_measurements_bypass_internal_norm() {
    let mut net = Network::<f64>::new(NetworkConfig::miniature(), 4).unwrap();
    let norm = MeasurementNorm { mean: vec![0.5; 4], std: vec![2.0; 4] };
    net.set_input_norm(norm.clone()).unwrap();
    let raw = MeasurementVector::raw(vec![1.0, 2.0, 3.0, 4.0]);
    let mut std = MeasurementVector::raw(norm.apply(&raw.values));
    std.domain = MeasurementDomain::Standardized;
    assert_eq!(net.expand(&raw).unwrap(), net.expand(&std).unwrap());
}

#[test]
fn shape_errors() {
    let net = Network::<f32>::new(NetworkConfig::miniature(), 1).unwrap();
    assert!(matches!(net.encode(&SceneImage::new(Array2::zeros((4, 4))).unwrap()), Err(Error::Shape(_))));
    assert!(matches!(net.expand(&MeasurementVector::raw(vec![0.0; 3])), Err(Error::Shape(_))));
    assert!(matches!(
        net.feature_extract(&FeatureMap { values: Array3::zeros((1, 3, 3)) }),
        Err(Error::Shape(_))
    ));
    assert!(matches!(net.segment_head(&FeatureMap { values: Array3::zeros((1, 4, 4)) }), Err(Error::Shape(_))));
    assert!(matches!(net.expand(&MeasurementVector::raw(vec![f64::NAN; 4])), Err(Error::Domain(_))));
}

#[test]
fn layer_shapes_at_full_scale() {
    let cfg = NetworkConfig::wbc(40);
    let net = Network::<f32>::uninitialized(cfg).unwrap();
    let m = MeasurementVector::raw(vec![0.0; 40]);
    let f = net.expand(&m).unwrap();
    assert_eq!(f.values.dim(), (1, 32, 32));
    assert_eq!(net.params().count_in(ParamGroup::Encoder), 40 * 4096);
    assert_eq!(net.params().count_in(ParamGroup::Expansion), 40 * 1024 + 1024);
    assert_eq!(net.head().channels(), &[32, 64, 128]);
}

#[test]
fn parameter_count_formula() {
    for cfg in [NetworkConfig::miniature(), NetworkConfig::wbc(40), NetworkConfig::wbc(1)] {
        let net = Network::<f32>::uninitialized(cfg.clone()).unwrap();
        assert_eq!(net.params().count() as u64, cfg.param_count());
    }
}

#[test]
fn shrink_layer_has_684_parameters() {
    let net = Network::<f32>::uninitialized(NetworkConfig::wbc(40)).unwrap();
    let n: usize = net
        .params()
        .params()
        .iter()
        .filter(|p| p.name == "fe.shrink.weight" || p.name == "fe.shrink.bias")
        .map(|p| p.value.len())
        .sum();
    assert_eq!(n, 56 * 12 + 12);
}

#[test]
fn expansion_index_layout() {
    let mut net = Network::<f64>::new(NetworkConfig::wbc(3), 1).unwrap();
    let m = MeasurementVector::raw(vec![0.3, -1.2, 2.0]);
    let f = net.expand(&m).unwrap();
    let w = net.expansion_weight().to_owned();
    let b = net.params().get(net.expansion.bias).clone();
    for (r, k) in [(0, 0), (3, 7), (31, 31)] {
        let unit = 32 * r + k;
        let want = b[[unit]] + (0..3).map(|i| w[[unit, i]] * m.values[i]).sum::<f64>();
        assert!((f.values[[0, r, k]] - want).abs() < 1e-12);
    }
    let bias = net.expansion.bias;
    net.params_mut().get_mut(bias).fill(0.0);
    let z = net.expand(&MeasurementVector::raw(vec![0.0; 3])).unwrap();
    assert!(z.values.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_input_gives_zero_features_with_zero_biases() {
    let net = Network::<f64>::new(NetworkConfig::miniature(), 3).unwrap();
    let (fh, fw) = net.config().feature_dims();
    let out = net.feature_extract(&FeatureMap { values: Array3::zeros((1, fh, fw)) }).unwrap();
    assert!(out.values.iter().all(|&v| v == 0.0));
}

#[test]
fn head_is_not_degenerate() {
    let net = Network::<f64>::new(NetworkConfig::miniature(), 6).unwrap();
    let x = FeatureMap { values: scene((8, 8), 2).insert_axis(Axis(0)) };
    let doubled = FeatureMap { values: &x.values * 2.0 };
    assert_ne!(net.segment_head(&x).unwrap().scores, net.segment_head(&doubled).unwrap().scores);
}

#[test]
fn head_receptive_field_exceeds_16_pixels() {
    // perturb one input pixel and see how far the change reaches
    let mut cfg = NetworkConfig::wbc(4);
    cfg.seg_head.base_channels = 2;
    let net = Network::<f64>::new(cfg, 8).unwrap();
    let base = FeatureMap { values: scene((64, 64), 5).insert_axis(Axis(0)) };
    let mut poked = base.clone();
    poked.values[[0, 32, 32]] += 1.0;
    let a = net.segment_head(&base).unwrap().scores;
    let b = net.segment_head(&poked).unwrap().scores;
    let mut reach = 0usize;
    for ((_, r, c), v) in a.indexed_iter() {
        if (v - b[[0, r, c]]).abs() > 0.0 || (a[[1, r, c]] - b[[1, r, c]]).abs() > 0.0 {
            reach = reach.max((r as isize - 32).unsigned_abs()).max((c as isize - 32).unsigned_abs());
        }
    }
    assert!(2 * reach + 1 > 16, "reach {reach}");
}

#[test]
fn shape_pipeline_for_many_measurement_counts() {
    for n in [1, 4, 40, 205, 2048] {
        let net = Network::<f32>::uninitialized(NetworkConfig::wbc(n)).unwrap();
        let img = SceneImage::new(Array2::from_elem((64, 64), 0.5)).unwrap();
        let m = net.encode(&img).unwrap();
        assert_eq!(m.len(), n);
        assert_eq!(net.forward(&img).unwrap().scores.dim(), (3, 64, 64));
    }
}

#[test]
fn argmax_ties_pick_lowest_class() {
    let scores = Array3::from_shape_vec((3, 1, 2), vec![1.0, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
    let map = argmax_map(scores.view());
    assert_eq!(map.labels.as_slice().unwrap(), &[0, 1]);
}

#[test]
fn config_validation() {
    let mut cfg = NetworkConfig::miniature();
    cfg.fc_width = 15;
    assert!(cfg.validate().is_err());
    let mut cfg = NetworkConfig::miniature();
    cfg.n_measurements = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = NetworkConfig::miniature();
    cfg.class_names.pop();
    assert!(cfg.validate().is_err());
}
