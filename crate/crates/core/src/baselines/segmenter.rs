//! Image-domain segmenter: a global standardization stem followed by the
//! same nested-U head the image-free network uses, fed a one-channel image.

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{pack, unpack};
use crate::datasets::LabeledSample;
use crate::network::{argmax_map, mse, one_hot, NestedUNet, SegHeadConfig, SegmentationMap};
use crate::nn::{Grads, ParamGroup, ParamStore};
use crate::training::{fit, EpochRecord, FitSpec, StageConfig, Trainable};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPISEGSG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub head: SegHeadConfig,
    pub schedule: StageConfig,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            head: SegHeadConfig::default(),
            schedule: StageConfig { dataset_id: "wbc".into(), epochs: 60, ..StageConfig::stage2() },
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    dims: (usize, usize),
    n_classes: usize,
    head: SegHeadConfig,
    mean: f64,
    std: f64,
}

#[derive(Clone, Debug)]
pub struct ImageSegmenter {
    params: ParamStore<f32>,
    head: NestedUNet,
    header: Header,
}

impl Trainable for ImageSegmenter {
    fn store(&self) -> &ParamStore<f32> {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }
}

impl ImageSegmenter {
    fn build(header: Header) -> Result<Self> {
        let (h, w) = header.dims;
        let f = 1usize << header.head.depth.min(16);
        if header.head.depth > 8 || h == 0 || w == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::Config(format!("image {h}×{w} does not fit a depth-{} head", header.head.depth)));
        }
        if header.head.base_channels == 0 || header.head.base_channels > 4096 || header.head.convs_per_node == 0 {
            return Err(Error::Config("invalid segmenter head widths".into()));
        }
        if !(2..=256).contains(&header.n_classes) || !(header.std > 0.0 && header.std.is_finite()) {
            return Err(Error::Config("invalid segmenter class count or stem".into()));
        }
        let mut params = ParamStore::new();
        let head = NestedUNet::new(&mut params, "segmenter", ParamGroup::SegmentationHead, &header.head, 1, header.n_classes);
        Ok(Self { params, head, header })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.header.dims
    }

    pub fn n_classes(&self) -> usize {
        self.header.n_classes
    }

    fn stem(&self, img: ArrayView2<'_, f64>) -> Result<Array3<f32>> {
        if img.dim() != self.header.dims {
            return Err(Error::Shape(format!("segmenter expects {:?}, got {:?}", self.header.dims, img.dim())));
        }
        let (m, s) = (self.header.mean, self.header.std);
        Ok(img.mapv(|v| ((v - m) / s) as f32).insert_axis(Axis(0)))
    }

    pub fn scores(&self, img: ArrayView2<'_, f64>) -> Result<Array3<f32>> {
        Ok(self.head.forward(&self.params, &self.stem(img)?))
    }

    pub fn segment(&self, img: ArrayView2<'_, f64>) -> Result<SegmentationMap> {
        Ok(argmax_map(self.scores(img)?.view()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        pack(MAGIC, &self.header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, values): (Header, _) = unpack(bytes, MAGIC)?;
        let mut s = Self::build(header)?;
        s.params.load_f64(&values).map_err(Error::Checkpoint)?;
        Ok(s)
    }
}

/// Trains on clean images with MSE against one-hot labels.
pub fn image_segmenter_train(train: &[LabeledSample], cfg: &SegmenterConfig) -> Result<(ImageSegmenter, Vec<EpochRecord>)> {
    let first = train.first().ok_or_else(|| Error::Training("segmenter needs training samples".into()))?;
    let n_classes = first.labels.n_classes;
    if let Some(bad) = train.iter().find(|s| s.labels.n_classes != n_classes) {
        return Err(Error::Training(format!("sample {} has {} classes, expected {n_classes}", bad.source_id, bad.labels.n_classes)));
    }
    let n_px = train.len() * first.scene.pixels().len();
    let mean = train.iter().map(|s| s.scene.pixels().sum()).sum::<f64>() / n_px as f64;
    let var = train.iter().map(|s| s.scene.pixels().iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sum::<f64>()
        / n_px as f64;
    let header = Header { dims: first.scene.dims(), n_classes, head: cfg.head.clone(), mean, std: var.sqrt().max(1e-6) };
    let mut seg = ImageSegmenter::build(header)?;
    seg.params.initialize(cfg.seed);
    let inputs: Vec<Array3<f32>> = train.iter().map(|s| seg.stem(s.scene.pixels())).collect::<Result<_>>()?;
    let targets: Vec<Array3<f32>> = train.iter().map(|s| one_hot(&s.labels.labels, n_classes)).collect();
    let spec = FitSpec {
        schedule: &cfg.schedule,
        batch_size: cfg.batch_size,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        stage: 2,
        start_epoch: 0,
    };
    let records = fit(
        &mut seg,
        train.len(),
        &spec,
        |_| true,
        |m, i, grads: &mut Grads<f32>| {
            let (scores, tr) = m.head.forward_trace(&m.params, &inputs[i]);
            let (loss, d) = mse(&scores, &targets[i]);
            m.head.backward(&m.params, inputs[i].dim(), &tr, &d, grads);
            Ok(loss)
        },
        |_, _| Ok(()),
    )?;
    Ok((seg, records))
}
