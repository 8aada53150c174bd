//! Checkpoint container.
//!
//! Layout (see [`crate::container`]): magic `SPISEGCK`, format version, a
//! JSON header describing the network configuration, training progress,
//! modulation and measurement statistics plus one entry per parameter tensor
//! (name, group, role, shape), then every parameter as `f64` LE in header
//! order, then a SHA-256 trailer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Modulation, Model, Progress};
use crate::container;
use crate::network::{MeasurementNorm, Network, NetworkConfig};
use crate::nn::{ParamGroup, ParamRole};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SPISEGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: ParamGroup,
    role: ParamRole,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    progress: Progress,
    modulation: Modulation,
    seed: u64,
    input_norm: MeasurementNorm,
    /// Training-set statistics of raw measurements, used by calibration.
    train_stats: Option<MeasurementNorm>,
    bank_digest: String,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let params = model.network.params();
    let header = Header {
        network: model.network.config().clone(),
        progress: model.progress,
        modulation: model.modulation.clone(),
        seed: model.seed,
        input_norm: model.network.input_norm().clone(),
        train_stats: model.train_stats.clone(),
        bank_digest: model.bank()?.digest(),
        tensors: params
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), group: p.group, role: p.role, shape: p.value.shape().to_vec() })
            .collect(),
    };
    let payload = container::f64s_to_le(params.params().iter().flat_map(|p| p.value.iter().map(|&v| v as f64)));
    Ok(container::encode(MAGIC, CHECKPOINT_VERSION, &serde_json::to_vec(&header)?, &payload))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let (header, payload) = container::decode(bytes, MAGIC, CHECKPOINT_VERSION)?;
    let header: Header = serde_json::from_slice(header)?;
    // the layer graph is rebuilt from the configuration; validate cheaply
    // before allocating so a hostile header cannot request huge tensors
    header.network.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let declared: u64 = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d as u64)).unwrap_or(u64::MAX))
        .fold(0u64, |a, b| a.saturating_add(b));
    if declared != header.network.param_count() || declared.saturating_mul(8) != payload.len() as u64 {
        return Err(Error::Checkpoint(format!("payload holds {} bytes, header declares {declared} values", payload.len())));
    }
    let mut network = Network::<f32>::uninitialized(header.network)?;
    let store = network.params_mut();
    if store.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, configuration builds {}",
            header.tensors.len(),
            store.len()
        )));
    }
    let values = container::le_to_f64s(payload)?;
    let mut offset = 0;
    for (p, t) in store.params_mut().iter_mut().zip(&header.tensors) {
        if p.name != t.name || p.group != t.group || p.role != t.role || p.value.shape() != t.shape.as_slice() {
            return Err(Error::Checkpoint(format!("tensor {} does not match the configuration", t.name)));
        }
        let n = p.value.len();
        for (dst, &src) in p.value.iter_mut().zip(&values[offset..offset + n]) {
            *dst = src as f32;
        }
        offset += n;
    }
    network.set_input_norm(header.input_norm).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let model = Model {
        network,
        modulation: header.modulation,
        progress: header.progress,
        seed: header.seed,
        train_stats: header.train_stats,
    };
    let digest = model.bank()?.digest();
    if digest != header.bank_digest {
        return Err(Error::Digest { expected: header.bank_digest, actual: digest });
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    container::write_atomic(path, &to_bytes(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}
