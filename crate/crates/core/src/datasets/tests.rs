use super::*;
use crate::raster::write_gray_png;
use image::{Rgb, RgbImage};

fn sample(i: usize) -> LabeledSample {
    let scene = Array2::from_shape_fn((64, 64), |(r, c)| ((r * 3 + c + i) % 64) as f64 / 63.0);
    let labels = Array2::from_shape_fn((64, 64), |(r, c)| (((r / 8) + (c / 8) + i) % 3) as u8);
    LabeledSample {
        scene: SceneImage::new(scene).unwrap(),
        labels: SegmentationMap::new(labels, 3).unwrap(),
        source_id: format!("s{i}"),
        augmentation_tag: "raw".into(),
    }
}

#[test]
fn label_thresholds() {
    assert_eq!(decode_wbc_label(0), 0);
    assert_eq!(decode_wbc_label(63), 0);
    assert_eq!(decode_wbc_label(64), 1);
    assert_eq!(decode_wbc_label(128), 1);
    assert_eq!(decode_wbc_label(191), 1);
    assert_eq!(decode_wbc_label(192), 2);
    assert_eq!(decode_wbc_label(255), 2);
}

#[test]
fn augmentation_arithmetic() {
    let raw: Vec<LabeledSample> = (0..300).map(sample).collect();
    let aug = augment_wbc(&raw, 11);
    assert_eq!(aug.len(), 3600);
    let mirrored = aug.iter().filter(|s| s.augmentation_tag.ends_with("+orig")).count();
    assert_eq!(mirrored, 1200);
    let (train, test) = split(&aug, 2700, 3).unwrap();
    assert_eq!((train.len(), test.len()), (2700, 900));
    assert!(aug.iter().all(|s| s.labels.labels.iter().all(|&l| l < 3)));
    assert!(aug.iter().all(|s| s.scene.pixels().iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn augmentation_is_seeded() {
    let raw: Vec<LabeledSample> = (0..2).map(sample).collect();
    assert_eq!(augment_wbc(&raw, 1), augment_wbc(&raw, 1));
    assert_ne!(augment_wbc(&raw, 1), augment_wbc(&raw, 2));
}

#[test]
fn scene_and_label_share_geometry() {
    // labels and an intensity copy of them must stay aligned after every transform
    let labels = Array2::from_shape_fn((64, 64), |(r, c)| (((r / 8) + (c / 8)) % 2) as u8);
    let raw = LabeledSample {
        scene: SceneImage::new(labels.mapv(f64::from)).unwrap(),
        labels: SegmentationMap::new(labels, 2).unwrap(),
        source_id: "board".into(),
        augmentation_tag: "raw".into(),
    };
    for s in augment_wbc(&[raw], 5) {
        let mut agree = 0;
        for (v, &l) in s.scene.pixels().iter().zip(&s.labels.labels) {
            if *v == 0.0 || *v == 1.0 {
                assert_eq!(*v, l as f64, "{}", s.augmentation_tag);
            }
            if v.round() as u8 == l {
                agree += 1;
            }
        }
        assert!(agree as f64 / 4096.0 > 0.9, "{}: {agree}", s.augmentation_tag);
    }
}

#[test]
fn split_contract() {
    let items: Vec<usize> = (0..100).collect();
    let (a, b) = split(&items, 75, 9).unwrap();
    let (a2, _) = split(&items, 75, 9).unwrap();
    assert_eq!(a, a2);
    let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
    all.sort();
    assert_eq!(all, items);
    assert_ne!(split(&items, 75, 10).unwrap().0, a);
    assert!(split(&items, 101, 0).is_err());
}

fn write_pair(root: &Path, stem: &str, img: &Array2<u8>, lbl: &Array2<u8>) {
    std::fs::create_dir_all(root.join("images")).unwrap();
    std::fs::create_dir_all(root.join("labels")).unwrap();
    write_gray_png(img, &root.join("images").join(format!("{stem}.png"))).unwrap();
    write_gray_png(lbl, &root.join("labels").join(format!("{stem}.png"))).unwrap();
}

#[test]
fn loads_and_decodes_wbc_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let img = Array2::from_elem((120, 120), 200u8);
    let mut lbl = Array2::zeros((120, 120));
    lbl.slice_mut(ndarray::s![40..80, 40..80]).fill(128);
    lbl.slice_mut(ndarray::s![55..65, 55..65]).fill(255);
    write_pair(dir.path(), "a", &img, &lbl);
    write_pair(dir.path(), "b", &img, &Array2::zeros((120, 120)));
    let out = load_wbc(dir.path()).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].source_id, "a");
    assert_eq!(out[0].scene.dims(), (64, 64));
    let mut seen = [false; 3];
    out[0].labels.labels.iter().for_each(|&l| seen[l as usize] = true);
    assert_eq!(seen, [true; 3]);
    assert!(out[1].labels.labels.iter().all(|&l| l == 0));
    assert!((out[0].scene.pixels()[[0, 0]] - 200.0 / 255.0).abs() < 1e-6);
}

#[test]
fn ingestion_errors_list_offenders() {
    let dir = tempfile::tempdir().unwrap();
    write_pair(dir.path(), "ok", &Array2::zeros((8, 8)), &Array2::zeros((8, 8)));
    write_pair(dir.path(), "odd", &Array2::zeros((8, 8)), &Array2::zeros((6, 8)));
    std::fs::write(dir.path().join("images/orphan.png"), b"not a png").unwrap();
    match load_wbc(dir.path()) {
        Err(Error::Ingestion { offenders }) => {
            let names: Vec<String> =
                offenders.iter().map(|(p, _)| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
            assert!(names.contains(&"orphan.png".to_string()), "{names:?}");
            assert_eq!(offenders.len(), 1, "pairing errors are reported before decoding");
        }
        other => panic!("{other:?}"),
    }
    std::fs::remove_file(dir.path().join("images/orphan.png")).unwrap();
    match load_wbc(dir.path()) {
        Err(Error::Ingestion { offenders }) => {
            assert_eq!(offenders.len(), 1);
            assert!(offenders[0].0.ends_with("labels/odd.png"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(load_wbc(&dir.path().join("nope")), Err(Error::Ingestion { .. })));
}

#[test]
fn natural_loader_contract() {
    let dir = tempfile::tempdir().unwrap();
    let mut rgb = RgbImage::new(3, 1);
    rgb.put_pixel(0, 0, Rgb([255, 0, 0]));
    rgb.put_pixel(1, 0, Rgb([0, 255, 0]));
    rgb.put_pixel(2, 0, Rgb([0, 0, 255]));
    rgb.save(dir.path().join("b_primaries.png")).unwrap();
    synthetic::write_synthetic_natural(&dir.path().join("sub"), 3, 1).unwrap();
    write_gray_png(&Array2::from_elem((10, 20), 51u8), &dir.path().join("a_flat.png")).unwrap();
    let scenes = load_natural_pretrain(dir.path(), 5).unwrap();
    assert_eq!(scenes.len(), 5);
    assert!(scenes.iter().all(|s| s.dims() == (64, 64)));
    assert!(scenes[0].pixels().iter().all(|v| (v - 0.2).abs() < 1e-6));
    // a 3×1 image centre-crops to its green pixel
    assert!(scenes[1].pixels().iter().all(|v| (v - 0.587).abs() < 1e-6));
    assert_eq!(load_natural_pretrain(dir.path(), 3).unwrap(), scenes[..3].to_vec());
    assert!(matches!(load_natural_pretrain(dir.path(), 6), Err(Error::Ingestion { .. })));
}

#[test]
fn uas_contract() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_uas(&dir.path().join("absent")), Err(Error::DatasetUnavailable(_))));
    let lbl = Array2::from_shape_fn((32, 32), |(_, c)| if c < 16 { 0u8 } else { 255 });
    write_pair(&dir.path().join("train"), "r0", &Array2::zeros((32, 32)), &lbl);
    write_pair(&dir.path().join("test"), "r1", &Array2::zeros((32, 32)), &lbl);
    let ds = load_uas(dir.path()).unwrap();
    assert_eq!((ds.manifest.counts.train, ds.manifest.counts.test), (1, 1));
    let l = &ds.train[0].labels;
    assert_eq!(l.n_classes, 2);
    assert_eq!((l.labels[[0, 0]], l.labels[[0, 63]]), (0, 1));
}

#[test]
fn prepared_cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    synthetic::write_synthetic_wbc(dir.path(), 8, 3).unwrap();
    let ds = prepare_wbc(dir.path(), &WbcOptions { quarter: true, seed: 1 }).unwrap();
    assert_eq!(ds.manifest.counts, Counts { raw: 2, augmented: 24, train: 18, test: 6 });
    let bytes = ds.to_bytes().unwrap();
    assert_eq!(PreparedDataset::from_bytes(&bytes).unwrap(), ds);
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(PreparedDataset::from_bytes(&bad), Err(Error::Digest { .. })));
    let path = dir.path().join("cache.bin");
    ds.save(&path).unwrap();
    assert_eq!(PreparedDataset::load(&path).unwrap(), ds);
}
