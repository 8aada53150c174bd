use super::*;
use crate::network::SegmentationMap;
use crate::nn::ParamRole;

fn tiny_cfg(epochs1: usize, epochs2: usize) -> TrainConfig {
    TrainConfig {
        stage1: StageConfig { dataset_id: "natural".into(), lr0: 2e-3, decay: 0.8, decay_every: 2, epochs: epochs1 },
        stage2: StageConfig { dataset_id: "wbc".into(), lr0: 1e-3, decay: 0.8, decay_every: 2, epochs: epochs2 },
        batch_size: 3,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn scenes(n: usize) -> Vec<SceneImage> {
    (0..n)
        .map(|i| SceneImage::new(Array2::from_shape_fn((8, 8), |(r, c)| ((r * 5 + c * 3 + i * 7) % 11) as f64 / 10.0)).unwrap())
        .collect()
}

fn labeled(n: usize) -> Vec<LabeledSample> {
    scenes(n)
        .into_iter()
        .enumerate()
        .map(|(i, scene)| {
            let labels = scene.pixels().mapv(|v| u8::from(v > 0.5));
            LabeledSample {
                scene,
                labels: SegmentationMap::new(labels, 2).unwrap(),
                source_id: format!("s{i}"),
                augmentation_tag: "raw".into(),
            }
        })
        .collect()
}

fn model(modulation: Modulation) -> Model {
    Model::new(NetworkConfig::miniature(), modulation, 9).unwrap()
}

#[test]
fn lr_schedule_values() {
    let s1 = StageConfig::stage1();
    assert_eq!(s1.lr(0), 2e-3);
    assert_eq!(s1.lr(19), 2e-3);
    assert!((s1.lr(20) - 1.6e-3).abs() < 1e-15);
    let s2 = StageConfig::stage2();
    assert_eq!(s2.lr(49), 1e-3);
    assert!((s2.lr(50) - 8e-4).abs() < 1e-15);
    assert!((s2.lr(100) - 6.4e-4).abs() < 1e-15);
}

#[test]
fn stage1_leaves_head_untouched() {
    let mut m = model(Modulation::Learned);
    let head = m.network.params().checksum(ParamGroup::SegmentationHead);
    let enc = m.network.params().checksum(ParamGroup::Encoder);
    let fe = m.network.params().checksum(ParamGroup::FeatureExtraction);
    let report = train_stage1(&mut m, &scenes(7), &tiny_cfg(3, 2), None).unwrap();
    assert_eq!(report.records.len(), 3);
    assert_eq!(report.records.iter().map(|r| r.lr).collect::<Vec<_>>(), vec![2e-3, 2e-3, 1.6e-3]);
    assert_eq!(m.network.params().checksum(ParamGroup::SegmentationHead), head);
    assert_ne!(m.network.params().checksum(ParamGroup::Encoder), enc);
    assert_ne!(m.network.params().checksum(ParamGroup::FeatureExtraction), fe);
    assert_eq!(m.progress, Progress { stage: Stage::Stage1, epochs_done: 3 });
}

#[test]
fn stage2_changes_every_group_and_records_stats() {
    let cfg = tiny_cfg(1, 2);
    let mut m = model(Modulation::Learned);
    train_stage1(&mut m, &scenes(5), &cfg, None).unwrap();
    let before: Vec<String> = ParamGroup::NETWORK.iter().map(|&g| m.network.params().checksum(g)).collect();
    let report = train_stage2(&mut m, &labeled(5), &cfg, None).unwrap();
    assert_eq!(report.losses(2).len(), 2);
    for (g, b) in ParamGroup::NETWORK.iter().zip(&before) {
        assert_ne!(&m.network.params().checksum(*g), b, "{g:?}");
    }
    let stats = m.train_stats.clone().unwrap();
    assert_eq!(m.network.input_norm(), &stats);
    assert!(m.is_trained(&cfg));
}

#[test]
fn fixed_bank_stays_frozen() {
    let cfg = tiny_cfg(1, 1);
    let mut m = model(Modulation::Random { seed: 4 });
    let bank = make_random_patterns(4, (8, 8), 4).unwrap();
    assert_eq!(m.bank().unwrap().to_matrix(), bank.to_matrix().mapv(|v| v as f32 as f64));
    let enc = m.network.params().checksum(ParamGroup::Encoder);
    train(&mut m, &scenes(4), &labeled(4), &cfg, None).unwrap();
    assert_eq!(m.network.params().checksum(ParamGroup::Encoder), enc);
    assert_eq!(m.bank().unwrap().strategy(), Strategy::Random);
}

#[test]
fn two_stage_requires_stage1() {
    let mut m = model(Modulation::Learned);
    assert!(matches!(train_stage2(&mut m, &labeled(3), &tiny_cfg(1, 1), None), Err(Error::Training(_))));
    let one = TrainConfig { strategy: TrainingStrategy::OneStage, ..tiny_cfg(1, 1) };
    let head = m.network.params().checksum(ParamGroup::SegmentationHead);
    let r = train(&mut m, &scenes(3), &labeled(3), &one, None).unwrap();
    assert!(r.losses(1).is_empty());
    assert_ne!(m.network.params().checksum(ParamGroup::SegmentationHead), head);
}

#[test]
fn class_count_mismatch_is_rejected() {
    let mut data = labeled(2);
    data[1].labels = SegmentationMap::new(Array2::zeros((8, 8)), 3).unwrap();
    let mut m = model(Modulation::Learned);
    let one = TrainConfig { strategy: TrainingStrategy::OneStage, ..tiny_cfg(1, 1) };
    assert!(matches!(train_stage2(&mut m, &data, &one, None), Err(Error::Training(_))));
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_cfg(2, 2);
    let run = || {
        let mut m = model(Modulation::Learned);
        let r = train(&mut m, &scenes(5), &labeled(5), &cfg, None).unwrap();
        (checkpoint_to_bytes(&m).unwrap(), r.records)
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_loss_aborts() {
    let mut m = model(Modulation::Learned);
    let p = &mut m.network.params_mut().params_mut()[1];
    p.value.fill(f32::NAN);
    assert!(matches!(train_stage1(&mut m, &scenes(3), &tiny_cfg(1, 1), None), Err(Error::Training(_))));
}

#[test]
fn checkpoint_round_trip_and_tamper() {
    let mut m = model(Modulation::Hadamard { ordering: HadamardOrdering::Sequency });
    train(&mut m, &scenes(4), &labeled(4), &tiny_cfg(1, 1), None).unwrap();
    let bytes = checkpoint_to_bytes(&m).unwrap();
    let back = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(back.network.params(), m.network.params());
    assert_eq!(back.network.input_norm(), m.network.input_norm());
    assert_eq!((back.progress, back.seed, &back.train_stats), (m.progress, m.seed, &m.train_stats));
    assert_eq!(back.modulation, m.modulation);
    let s = &labeled(1)[0].scene;
    assert_eq!(back.network.forward(s).unwrap().scores, m.network.forward(s).unwrap().scores);

    let mut bad = bytes.clone();
    let i = bad.len() - 40;
    bad[i] ^= 1;
    assert!(matches!(checkpoint_from_bytes(&bad), Err(Error::Digest { .. })));
    assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut wrong = bytes.clone();
    wrong[8] = 99;
    assert!(matches!(checkpoint_from_bytes(&wrong), Err(Error::Digest { .. }) | Err(Error::Version { .. })));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let cfg = tiny_cfg(2, 2);
    let mut full = model(Modulation::Learned);
    train(&mut full, &scenes(4), &labeled(4), &cfg, Some(&path)).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert_eq!(reloaded.network.params(), full.network.params());

    // stopping after stage 1 and resuming starts stage 2 at epoch 0
    let mut part = model(Modulation::Learned);
    train_stage1(&mut part, &scenes(4), &cfg, Some(&path)).unwrap();
    let mut resumed = load_checkpoint(&path).unwrap();
    assert_eq!(resumed.progress, Progress { stage: Stage::Stage1, epochs_done: 2 });
    let r = train(&mut resumed, &scenes(4), &labeled(4), &cfg, None).unwrap();
    assert!(r.losses(1).is_empty());
    assert_eq!(r.records[0].epoch, 0);
    assert_eq!(resumed.network.params(), full.network.params());
}

#[test]
fn report_csv_layout() {
    let r = TrainReport {
        records: vec![EpochRecord { stage: 1, epoch: 0, lr: 0.002, loss: 0.5 }],
        ..Default::default()
    };
    assert_eq!(r.to_csv(), "epoch,stage,lr,loss\n0,1,0.002,0.5\n");
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let mut c = TrainConfig::default();
    c.batch_size = 0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.stage2.decay = 1.5;
    assert!(c.validate().is_err());
    let toml_text = toml::to_string(&TrainConfig::default()).unwrap();
    assert_eq!(toml::from_str::<TrainConfig>(&toml_text).unwrap(), TrainConfig::default());
}

#[test]
fn weight_variance_matches_fan_in() {
    let m = Model::new(NetworkConfig::wbc(40), Modulation::Learned, 3).unwrap();
    for p in m.network.params().params() {
        match p.role {
            ParamRole::Weight { fan_in } => {
                let n = p.value.len() as f64;
                let var = p.value.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
                assert!((var - 2.0 / fan_in as f64).abs() < 1e-4 * 2.0 / fan_in as f64, "{}", p.name);
            }
            ParamRole::Bias => assert!(p.value.iter().all(|&v| v == 0.0)),
            ParamRole::Slope => assert!(p.value.iter().all(|&v| v == 0.25)),
        }
    }
}
