//! Detector recordings and their calibration into the measurement domain a
//! trained decoder expects.
//!
//! A recording is a UTF-8 CSV preceded by optional `# key: value` metadata
//! lines:
//!
//! ```text
//! # device: bench-photodiode
//! # dark_level: 0.0125
//! pattern_index,value
//! 0,0.8731
//! 1,0.4410
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::network::MeasurementNorm;
use crate::sensing::export::BankManifest;
use crate::sensing::{MeasurementDomain, MeasurementVector, PatternBank};
use crate::{Error, Result};

pub const RECORDING_HEADER: &str = "pattern_index,value";
/// Metadata key that populates [`RawRecording::dark_level`].
pub const DARK_LEVEL_KEY: &str = "dark_level";
/// Recordings longer than this are rejected before allocation.
pub const MAX_ROWS: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    /// Detector value per pattern, indexed by pattern.
    pub values: Vec<f64>,
    /// Free-form `key: value` pairs in file order, `dark_level` excluded.
    pub device_meta: Vec<(String, String)>,
    pub dark_level: f64,
}

impl RawRecording {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, device_meta: Vec::new(), dark_level: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn from_measurements(m: &MeasurementVector) -> Self {
        Self::new(m.values.clone())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses recording text; rows may arrive in any order.
pub fn parse_recording(text: &str) -> Result<RawRecording> {
    let mut device_meta = Vec::new();
    let mut dark_level = None;
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)));
    let header_line = loop {
        let Some((no, line)) = lines.next() else {
            return Err(parse_err(1, format!("missing header `{RECORDING_HEADER}`")));
        };
        if let Some(meta) = line.strip_prefix('#') {
            let (k, v) = meta
                .split_once(':')
                .ok_or_else(|| parse_err(no, "metadata lines must read `# key: value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if k == DARK_LEVEL_KEY {
                let d: f64 = v.parse().map_err(|_| parse_err(no, format!("dark_level {v:?} is not a number")))?;
                if !d.is_finite() || dark_level.replace(d).is_some() {
                    return Err(parse_err(no, "dark_level must be finite and given once"));
                }
            } else {
                device_meta.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        break (no, line);
    };
    if header_line.1.trim() != RECORDING_HEADER {
        return Err(parse_err(header_line.0, format!("expected header `{RECORDING_HEADER}`, found {:?}", header_line.1)));
    }
    let mut rows: Vec<(usize, f64, usize)> = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, value) = line.split_once(',').ok_or_else(|| parse_err(no, "expected `pattern_index,value`"))?;
        let idx: usize = idx.trim().parse().map_err(|_| parse_err(no, format!("pattern index {:?} is not an integer", idx.trim())))?;
        let value: f64 = value.trim().parse().map_err(|_| parse_err(no, format!("value {:?} is not a number", value.trim())))?;
        if !value.is_finite() {
            return Err(parse_err(no, "value must be finite"));
        }
        if rows.len() >= MAX_ROWS || idx >= MAX_ROWS {
            return Err(parse_err(no, format!("recordings are limited to {MAX_ROWS} patterns")));
        }
        rows.push((idx, value, no));
    }
    if rows.is_empty() {
        return Err(parse_err(header_line.0, "recording has no rows"));
    }
    rows.sort_by_key(|r| (r.0, r.2));
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(parse_err(w[1].2, format!("duplicate pattern index {} (first on line {})", w[1].0, w[0].2)));
        }
    }
    if let Some((k, r)) = rows.iter().enumerate().find(|(k, r)| r.0 != *k) {
        return Err(parse_err(r.2, format!("pattern indices must be contiguous from 0; index {k} is missing")));
    }
    Ok(RawRecording { values: rows.into_iter().map(|r| r.1).collect(), device_meta, dark_level: dark_level.unwrap_or(0.0) })
}

/// Canonical text form: metadata, header, then rows in index order.
pub fn recording_to_string(rec: &RawRecording) -> Result<String> {
    let mut out = String::new();
    for (k, v) in &rec.device_meta {
        if k.is_empty() || k == DARK_LEVEL_KEY || k.contains([':', '\n', '\r']) || k.trim() != k {
            return Err(Error::Config(format!("invalid metadata key {k:?}")));
        }
        if v.contains(['\n', '\r']) || v.trim() != v {
            return Err(Error::Config(format!("invalid metadata value for {k:?}")));
        }
        writeln!(out, "# {k}: {v}").unwrap();
    }
    if !rec.dark_level.is_finite() || rec.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("recordings hold finite values only".into()));
    }
    writeln!(out, "# {DARK_LEVEL_KEY}: {}", rec.dark_level).unwrap();
    out.push_str(RECORDING_HEADER);
    out.push('\n');
    for (i, v) in rec.values.iter().enumerate() {
        writeln!(out, "{i},{v}").unwrap();
    }
    Ok(out)
}

pub fn read_recording(path: &Path) -> Result<RawRecording> {
    parse_recording(&fs::read_to_string(path)?)
}

pub fn write_recording(path: &Path, rec: &RawRecording) -> Result<()> {
    fs::write(path, recording_to_string(rec)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    /// Per-index standardization with the statistics stored in the checkpoint.
    #[default]
    ZscoreTrainStats,
    /// Divide by the largest magnitude.
    MaxOne,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub dark_level: f64,
    pub scale: f64,
    pub normalization: Normalization,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { dark_level: 0.0, scale: 1.0, normalization: Normalization::default() }
    }
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if !self.dark_level.is_finite() {
            return Err(Error::Calibration("dark_level must be finite".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Calibration(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cal: Calibration = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }
}

/// Fails unless `manifest` describes exactly `bank`.
pub fn verify_manifest(manifest: &BankManifest, bank: &PatternBank) -> Result<()> {
    let actual = bank.digest();
    if manifest.bank_digest != actual {
        return Err(Error::Digest { expected: manifest.bank_digest.clone(), actual });
    }
    Ok(())
}

/// `(value − dark_level) × scale`, then the configured normalization.
pub fn calibrate(
    raw: &RawRecording,
    cal: &Calibration,
    manifest: &BankManifest,
    train_stats: Option<&MeasurementNorm>,
) -> Result<MeasurementVector> {
    cal.validate()?;
    if raw.len() != manifest.count {
        return Err(Error::Shape(format!("recording has {} values, the pattern bank expects {}", raw.len(), manifest.count)));
    }
    let shifted: Vec<f64> = raw.values.iter().map(|v| (v - cal.dark_level) * cal.scale).collect();
    let (values, domain) = match cal.normalization {
        Normalization::None => (shifted, MeasurementDomain::Raw),
        Normalization::MaxOne => {
            let peak = shifted.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let values = if peak > 0.0 { shifted.iter().map(|v| v / peak).collect() } else { shifted };
            (values, MeasurementDomain::Raw)
        }
        Normalization::ZscoreTrainStats => {
            let stats = train_stats
                .ok_or_else(|| Error::Calibration("zscore_train_stats needs training statistics from a checkpoint".into()))?;
            if stats.len() != raw.len() || stats.std.len() != raw.len() {
                return Err(Error::Calibration(format!("training statistics cover {} measurements, recording has {}", stats.len(), raw.len())));
            }
            (stats.apply(&shifted), MeasurementDomain::Standardized)
        }
    };
    Ok(MeasurementVector { values, bank_id: Some(manifest.bank_digest.clone()), noise: None, domain })
}

#[cfg(test)]
mod tests;
