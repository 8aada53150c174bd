use ndarray::{ArrayD, IxDyn, NdFloat};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::digest::FloatHasher;
use crate::seeds;

/// Parameter groups; training stages select which groups may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    Expansion,
    FeatureExtraction,
    SegmentationHead,
    Reconstruction,
}

impl ParamGroup {
    pub const NETWORK: [ParamGroup; 4] = [
        ParamGroup::Encoder,
        ParamGroup::Expansion,
        ParamGroup::FeatureExtraction,
        ParamGroup::SegmentationHead,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamRole {
    Weight { fan_in: usize },
    Bias,
    /// Learnable negative slope of a parametric rectifier.
    Slope,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub role: ParamRole,
    pub value: ArrayD<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Flat, ordered parameter storage. Layers hold [`ParamId`]s into it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self { params: Vec::new() }
    }
}

pub const PRELU_INIT: f64 = 0.25;

impl<T: NdFloat> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, role: ParamRole, shape: &[usize]) -> ParamId {
        let init = match role {
            ParamRole::Slope => T::from(PRELU_INIT).unwrap(),
            _ => T::zero(),
        };
        self.params.push(Param {
            name: name.into(),
            group,
            role,
            value: ArrayD::from_elem(IxDyn(shape), init),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_in(&self, group: ParamGroup) -> usize {
        self.params.iter().filter(|p| p.group == group).map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads { tensors: self.params.iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect() }
    }

    /// Bit-exact digest of every parameter in `group`.
    pub fn checksum(&self, group: ParamGroup) -> String {
        let mut h = FloatHasher::new();
        for p in self.params.iter().filter(|p| p.group == group) {
            h.tag(&p.name);
            let vals: Vec<f64> = p.value.iter().map(|v| v.to_f64().unwrap()).collect();
            h.f64s(vals.iter());
        }
        h.finish()
    }

    /// Every value in storage order, widened to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().map(|v| v.to_f64().unwrap())).collect()
    }

    /// Overwrites every value in storage order; `values` must match [`Self::count`].
    pub fn load_f64(&mut self, values: &[f64]) -> Result<(), String> {
        if values.len() != self.count() {
            return Err(format!("{} values for {} parameters", values.len(), self.count()));
        }
        let mut it = values.iter();
        for p in &mut self.params {
            for v in p.value.iter_mut() {
                *v = T::from(*it.next().unwrap()).unwrap();
            }
        }
        Ok(())
    }

    /// Element type conversion (used to run the same weights in `f64`).
    pub fn cast<U: NdFloat>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    role: p.role,
                    value: p.value.mapv(|v| U::from(v).unwrap()),
                })
                .collect(),
        }
    }

    /// Fan-in scaled Gaussian initialization: each weight tensor is drawn,
    /// centred, and rescaled so its sample variance is exactly `2 / fan_in`.
    /// Biases are zeroed and rectifier slopes reset to [`PRELU_INIT`].
    pub fn initialize(&mut self, seed: u64) {
        for (i, p) in self.params.iter_mut().enumerate() {
            match p.role {
                ParamRole::Bias => p.value.fill(T::zero()),
                ParamRole::Slope => p.value.fill(T::from(PRELU_INIT).unwrap()),
                ParamRole::Weight { fan_in } => {
                    let mut rng = seeds::rng(seed, "weight-init", i as u64);
                    let mut draws: Vec<f64> =
                        (0..p.value.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let target = (2.0 / fan_in.max(1) as f64).sqrt();
                    if draws.len() > 1 {
                        let n = draws.len() as f64;
                        let mean = draws.iter().sum::<f64>() / n;
                        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
                        let scale = if var > 0.0 { target / var.sqrt() } else { target };
                        draws.iter_mut().for_each(|d| *d = (*d - mean) * scale);
                    } else {
                        draws.iter_mut().for_each(|d| *d *= target);
                    }
                    for (v, d) in p.value.iter_mut().zip(draws) {
                        *v = T::from(d).unwrap();
                    }
                }
            }
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub tensors: Vec<ArrayD<T>>,
}

impl<T: NdFloat> Grads<T> {
    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.tensors[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.tensors[id.0]
    }

    pub fn fill_zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(T::zero()));
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors.iter_mut().for_each(|t| t.mapv_inplace(|v| v * s));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
