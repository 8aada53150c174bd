//! Learned measurement-to-image reconstructor: standardized measurements, an
//! affine map to a full-size image, then three 3×3 refinement convolutions
//! added back as a residual.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::tv::ReconstructedImage;
use super::{pack, unpack};
use crate::network::{mse, MeasurementNorm};
use crate::nn::layers::{relu, relu_backward};
use crate::nn::{Conv2d, Grads, Linear, ParamGroup, ParamStore};
use crate::sensing::{simulate_clean, MeasurementDomain, MeasurementVector, PatternBank, SceneImage};
use crate::training::{fit, EpochRecord, FitSpec, StageConfig, Trainable};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPISEGDR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlRecConfig {
    /// Channels of the hidden refinement layers.
    pub width: usize,
    pub schedule: StageConfig,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DlRecConfig {
    fn default() -> Self {
        Self {
            width: 16,
            schedule: StageConfig { dataset_id: "wbc".into(), lr0: 1e-3, decay: 0.8, decay_every: 20, epochs: 30 },
            batch_size: 32,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    dims: (usize, usize),
    n_measurements: usize,
    width: usize,
    norm: MeasurementNorm,
    bank_digest: String,
}

#[derive(Clone, Debug)]
pub struct DlReconstructor {
    params: ParamStore<f32>,
    fc: Linear,
    convs: [Conv2d; 3],
    header: Header,
}

impl Trainable for DlReconstructor {
    fn store(&self) -> &ParamStore<f32> {
        &self.params
    }

    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }
}

struct Trace {
    input: Array1<f32>,
    acts: [Array3<f32>; 3],
    out: Array3<f32>,
}

impl DlReconstructor {
    fn build(header: Header) -> Result<Self> {
        let (h, w) = header.dims;
        let n = header.n_measurements;
        if h == 0 || w == 0 || h > 4096 || w > 4096 || n == 0 || n > h * w || header.width == 0 || header.width > 1024 {
            return Err(Error::Config("invalid reconstructor dimensions".into()));
        }
        if header.norm.len() != n || header.norm.std.len() != n {
            return Err(Error::Config("reconstructor statistics do not match the measurement count".into()));
        }
        if header.norm.std.iter().chain(&header.norm.mean).any(|v| !v.is_finite()) || header.norm.std.iter().any(|s| *s <= 0.0) {
            return Err(Error::Config("reconstructor statistics must be finite with positive deviations".into()));
        }
        let mut params = ParamStore::new();
        let g = ParamGroup::Reconstruction;
        let fc = Linear::new(&mut params, "dlrec.fc", g, n, h * w);
        let c = header.width;
        let convs = [
            Conv2d::new(&mut params, "dlrec.conv0", g, 1, c, 3),
            Conv2d::new(&mut params, "dlrec.conv1", g, c, c, 3),
            Conv2d::new(&mut params, "dlrec.conv2", g, c, 1, 3),
        ];
        Ok(Self { params, fc, convs, header })
    }

    pub fn n_measurements(&self) -> usize {
        self.header.n_measurements
    }

    pub fn bank_digest(&self) -> &str {
        &self.header.bank_digest
    }

    fn standardize(&self, raw: &[f64]) -> Array1<f32> {
        self.header.norm.apply(raw).iter().map(|&v| v as f32).collect()
    }

    fn trace(&self, input: Array1<f32>) -> Trace {
        let (h, w) = self.header.dims;
        let a0 = self.fc.forward(&self.params, &input).into_shape_with_order((1, h, w)).expect("dims");
        let a1 = relu(&self.convs[0].forward(&self.params, a0.view()));
        let a2 = relu(&self.convs[1].forward(&self.params, a1.view()));
        let out = &a0 + &self.convs[2].forward(&self.params, a2.view());
        Trace { input, acts: [a0, a1, a2], out }
    }

    fn backward(&self, tr: &Trace, d_out: &Array3<f32>, grads: &mut Grads<f32>) {
        let [a0, a1, a2] = &tr.acts;
        let d2 = self.convs[2].backward(&self.params, a2.view(), d_out.view(), grads, true).unwrap();
        let d2 = relu_backward(a2, &d2);
        let d1 = self.convs[1].backward(&self.params, a1.view(), d2.view(), grads, true).unwrap();
        let d1 = relu_backward(a1, &d1);
        let d0 = self.convs[0].backward(&self.params, a0.view(), d1.view(), grads, true).unwrap() + d_out;
        let d_fc: Array1<f32> = d0.iter().copied().collect();
        self.fc.backward(&self.params, &tr.input, &d_fc, grads, false);
    }

    pub fn reconstruct(&self, m: &MeasurementVector) -> Result<ReconstructedImage> {
        if m.len() != self.header.n_measurements {
            return Err(Error::Shape(format!("{} measurements, reconstructor expects {}", m.len(), self.header.n_measurements)));
        }
        if m.domain != MeasurementDomain::Raw {
            return Err(Error::Domain("reconstruction needs raw measurements".into()));
        }
        let out = self.trace(self.standardize(&m.values)).out;
        let pixels: Array2<f64> = out.index_axis(Axis(0), 0).mapv(|v| (v as f64).clamp(0.0, 1.0));
        Ok(ReconstructedImage { pixels, objective_trace: Vec::new(), iters_used: 0, converged: true })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        pack(MAGIC, &self.header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, values): (Header, _) = unpack(bytes, MAGIC)?;
        let mut r = Self::build(header)?;
        r.params.load_f64(&values).map_err(Error::Checkpoint)?;
        Ok(r)
    }
}

/// Fits the reconstructor on noiseless simulated measurements of `scenes`.
pub fn dlrec_train(scenes: &[SceneImage], bank: &PatternBank, cfg: &DlRecConfig) -> Result<(DlReconstructor, Vec<EpochRecord>)> {
    if scenes.is_empty() {
        return Err(Error::Training("reconstructor needs training scenes".into()));
    }
    let raw: Vec<Vec<f64>> = scenes.iter().map(|s| simulate_clean(s.pixels(), bank)).collect::<Result<_>>()?;
    let header = Header {
        dims: bank.dims(),
        n_measurements: bank.len(),
        width: cfg.width,
        norm: MeasurementNorm::from_samples(&raw)?,
        bank_digest: bank.digest(),
    };
    let mut rec = DlReconstructor::build(header)?;
    rec.params.initialize(cfg.seed);
    let inputs: Vec<Array1<f32>> = raw.iter().map(|r| rec.standardize(r)).collect();
    let targets: Vec<Array3<f32>> = scenes.iter().map(|s| s.pixels().mapv(|v| v as f32).insert_axis(Axis(0))).collect();
    let spec = FitSpec {
        schedule: &cfg.schedule,
        batch_size: cfg.batch_size,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed,
        stage: 2,
        start_epoch: 0,
    };
    let records = fit(
        &mut rec,
        scenes.len(),
        &spec,
        |_| true,
        |r, i, grads| {
            let tr = r.trace(inputs[i].clone());
            let (loss, d) = mse(&tr.out, &targets[i]);
            r.backward(&tr, &d, grads);
            Ok(loss)
        },
        |_, _| Ok(()),
    )?;
    Ok((rec, records))
}

pub fn dlrec_reconstruct(m: &MeasurementVector, rec: &DlReconstructor) -> Result<ReconstructedImage> {
    rec.reconstruct(m)
}

#[cfg(test)]
pub(super) fn gradient_check_instance() -> (DlReconstructor, Array1<f32>) {
    let bank = crate::sensing::make_random_patterns(3, (4, 4), 1).unwrap();
    let header = Header {
        dims: (4, 4),
        n_measurements: 3,
        width: 2,
        norm: MeasurementNorm::identity(3),
        bank_digest: bank.digest(),
    };
    let mut r = DlReconstructor::build(header).unwrap();
    r.params.initialize(2);
    (r, Array1::from(vec![0.3f32, -0.7, 1.1]))
}

#[cfg(test)]
pub(super) fn loss_and_grads(r: &DlReconstructor, input: &Array1<f32>, target: &Array3<f32>) -> (f64, Grads<f32>) {
    let tr = r.trace(input.clone());
    let (loss, d) = mse(&tr.out, target);
    let mut g = r.params.zero_grads();
    r.backward(&tr, &d, &mut g);
    (loss, g)
}

#[cfg(test)]
pub(super) fn params_mut(r: &mut DlReconstructor) -> &mut ParamStore<f32> {
    &mut r.params
}
