//! Pixel accuracy, Dice, per-dataset scoring and result tables.

mod panels;
mod tables;

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::LabeledSample;
use crate::network::SegmentationMap;
use crate::sensing::{apply_noise, NoiseModel, SceneImage};
use crate::training::Model;
use crate::{seeds, Error, Result};

pub use panels::{class_gray, decode_palette, emit_panels, encode_palette, render_text, PanelItem, GLYPH_H, GLYPH_W};
pub use tables::{render_markdown, render_plain};
pub use crate::experiment::{sweep, SweepReport};

fn check_pair(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
    }
    Ok(())
}

/// Percentage of pixels whose labels agree.
pub fn pixel_accuracy(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<f64> {
    check_pair(pred, gt)?;
    let same = pred.labels.iter().zip(&gt.labels).filter(|(a, b)| a == b).count();
    Ok(100.0 * same as f64 / gt.labels.len() as f64)
}

/// `2|P∩G| / (|P|+|G|)` for one class, 1 when both sets are empty.
pub fn class_dice(pred: &SegmentationMap, gt: &SegmentationMap, class: u8) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels.iter().zip(&gt.labels) {
        let (ia, ib) = (a == class, b == class);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    Ok(if p + g == 0 { 1.0 } else { 2.0 * both as f64 / (p + g) as f64 })
}

/// Mean Dice over `classes`, in percent.
pub fn dice_over(pred: &SegmentationMap, gt: &SegmentationMap, classes: &[u8]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Domain("dice needs at least one class".into()));
    }
    let mut sum = 0.0;
    for &c in classes {
        sum += class_dice(pred, gt, c)?;
    }
    Ok(100.0 * sum / classes.len() as f64)
}

/// Mean Dice over the foreground classes `1..C`, in percent.
pub fn dice(pred: &SegmentationMap, gt: &SegmentationMap) -> Result<f64> {
    let c = pred.n_classes.max(gt.n_classes).max(2);
    let fg: Vec<u8> = (1..c as u8).collect();
    dice_over(pred, gt, &fg)
}

/// Anything mapping a scene (through whatever sensing it simulates) to labels.
pub trait Segmenter {
    fn segment(&self, scene: &SceneImage, noise: &NoiseModel) -> Result<SegmentationMap>;
}

impl Segmenter for Model {
    fn segment(&self, scene: &SceneImage, noise: &NoiseModel) -> Result<SegmentationMap> {
        let clean = self.network.encode(scene)?;
        let m = apply_noise(&clean, noise)?;
        self.network.infer_from_measurements(&m)
    }
}

impl<F> Segmenter for F
where
    F: Fn(&SceneImage) -> Result<SegmentationMap>,
{
    fn segment(&self, scene: &SceneImage, _noise: &NoiseModel) -> Result<SegmentationMap> {
        self(scene)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub pa: f64,
    pub dice: f64,
    pub n_samples: usize,
}

/// Noise stream for one sample, keyed by its identity rather than its
/// position so that scoring does not depend on test-set order.
pub fn sample_noise(noise: &NoiseModel, sample: &LabeledSample) -> NoiseModel {
    let key = format!("{}/{}", sample.source_id, sample.augmentation_tag);
    noise.reseeded(seeds::derive(0, &key, 0))
}

fn order_free_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-image PA and Dice, averaged over the set.
pub fn evaluate<S: Segmenter + ?Sized>(segmenter: &S, test: &[LabeledSample], noise: &NoiseModel) -> Result<Scores> {
    if test.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty test set".into()));
    }
    let mut pa = Vec::with_capacity(test.len());
    let mut dc = Vec::with_capacity(test.len());
    for s in test {
        let pred = segmenter.segment(&s.scene, &sample_noise(noise, s))?;
        pa.push(pixel_accuracy(&pred, &s.labels)?);
        dc.push(dice(&pred, &s.labels)?);
    }
    Ok(Scores { pa: order_free_mean(pa), dice: order_free_mean(dc), n_samples: test.len() })
}

pub fn evaluate_model(model: &Model, test: &[LabeledSample], noise: &NoiseModel) -> Result<Scores> {
    evaluate(model, test, noise)
}

/// One line of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sampling_ratio: f64,
    pub method: String,
    pub modulation: String,
    pub training: String,
    pub pa: f64,
    pub dice: f64,
    pub n_samples: usize,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "sampling_ratio,method,modulation,training,pa,dice,n_samples,seed";

pub fn rows_to_csv(rows: &[MetricRow], header: bool) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() && header {
        return Ok(format!("{CSV_HEADER}\n"));
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Parse { line: 1, message: format!("expected header `{CSV_HEADER}`") });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Appends rows, writing the header when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(rows_to_csv(rows, fresh)?.as_bytes())?;
    Ok(())
}
