//! Pattern export for projection hardware: one 8-bit PNG per pattern, an
//! exact-value CSV (`index,row,col,value`) and a JSON manifest.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{PatternBank, Strategy};
use crate::digest::sha256_hex;
use crate::raster;
use crate::{Error, Result};

pub const MANIFEST_FORMAT: &str = "spiseg-patterns/1";
pub const CSV_FILE: &str = "patterns.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Min-max scaling applied to one pattern when quantizing it to 8 bits:
/// `byte = round((v - min) / (max - min) · 255)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PngScaling {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankManifest {
    pub format: String,
    pub strategy: Strategy,
    pub dims: (usize, usize),
    pub count: usize,
    pub seed: u64,
    pub bank_digest: String,
    pub csv_file: String,
    pub csv_sha256: String,
    pub png_scaling: Vec<PngScaling>,
}

impl BankManifest {
    pub fn for_bank(bank: &PatternBank) -> Self {
        let csv = bank_to_csv(bank);
        Self {
            format: MANIFEST_FORMAT.to_string(),
            strategy: bank.strategy(),
            dims: bank.dims(),
            count: bank.len(),
            seed: bank.seed(),
            bank_digest: bank.digest(),
            csv_file: CSV_FILE.to_string(),
            csv_sha256: sha256_hex(csv.as_bytes()),
            png_scaling: bank.patterns().iter().map(|p| scaling_of(&p.values)).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: BankManifest = serde_json::from_str(text)?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("unknown manifest format {:?}", m.format)));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

pub fn scaling_of(values: &Array2<f64>) -> PngScaling {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    PngScaling { min, max }
}

/// 8-bit quantization with the pattern's own min-max scaling. A constant
/// pattern maps to 255 when positive and 0 otherwise.
pub fn quantize_8bit(values: &Array2<f64>) -> (Array2<u8>, PngScaling) {
    let s = scaling_of(values);
    let span = s.max - s.min;
    let q = values.mapv(|v| {
        if span > 0.0 {
            ((v - s.min) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else if v > 0.0 {
            255
        } else {
            0
        }
    });
    (q, s)
}

/// Inverse of [`quantize_8bit`] up to quantization error.
pub fn dequantize_8bit(q: &Array2<u8>, s: PngScaling) -> Array2<f64> {
    let span = s.max - s.min;
    q.mapv(|b| if span > 0.0 { s.min + b as f64 / 255.0 * span } else { s.min })
}

/// Splits a ±1 pattern into the complementary binary pair `(P+, P-)` with
/// `P+ - P- = pattern`, for differential acquisition on a binary DMD.
pub fn dmd_complementary_pair(values: &Array2<f64>) -> Result<(Array2<u8>, Array2<u8>)> {
    if let Some(v) = values.iter().find(|v| **v != 1.0 && **v != -1.0) {
        return Err(Error::Domain(format!("complementary split needs ±1 entries, found {v}")));
    }
    let pos = values.mapv(|v| u8::from(v > 0.0));
    let neg = values.mapv(|v| u8::from(v < 0.0));
    Ok((pos, neg))
}

/// Exact CSV rendering; `{}` on `f64` prints the shortest representation that
/// parses back to the same bits.
pub fn bank_to_csv(bank: &PatternBank) -> String {
    let (h, w) = bank.dims();
    let mut out = String::with_capacity(bank.len() * h * w * 24);
    out.push_str("index,row,col,value\n");
    for p in bank.patterns() {
        for r in 0..h {
            for c in 0..w {
                out.push_str(&format!("{},{},{},{}\n", p.index, r, c, p.values[[r, c]]));
            }
        }
    }
    out
}

/// Rebuilds a bank from its CSV; every `(index, row, col)` cell must appear
/// exactly once for the manifest's count and dims.
pub fn bank_from_csv(text: &str, manifest: &BankManifest) -> Result<PatternBank> {
    let (h, w) = manifest.dims;
    let cells = manifest
        .count
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&v| v > 0 && v <= 1 << 24)
        .ok_or_else(|| Error::Config(format!("implausible bank size {} × {h} × {w}", manifest.count)))?;
    let mut values = vec![f64::NAN; cells];
    let mut seen = vec![false; cells];
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["index", "row", "col", "value"] {
        return Err(Error::Parse { line: 1, message: "expected header index,row,col,value".into() });
    }
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(Error::Parse { line, message: format!("expected 4 fields, got {}", rec.len()) });
        }
        let parse_usize = |s: &str, what: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse { line, message: format!("bad {what} {s:?}") })
        };
        let (i, r, c) = (parse_usize(&rec[0], "index")?, parse_usize(&rec[1], "row")?, parse_usize(&rec[2], "col")?);
        let v: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("bad value {:?}", &rec[3]) })?;
        if i >= manifest.count || r >= h || c >= w {
            return Err(Error::Parse { line, message: format!("cell ({i},{r},{c}) out of range") });
        }
        let k = (i * h + r) * w + c;
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::Parse { line, message: format!("duplicate cell ({i},{r},{c})") });
        }
        values[k] = v;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Parse {
            line: 0,
            message: format!("missing cell ({},{},{})", k / (h * w), (k / w) % h, k % w),
        });
    }
    let patterns = values
        .chunks(h * w)
        .map(|chunk| Array2::from_shape_vec((h, w), chunk.to_vec()).expect("chunk size"))
        .collect();
    PatternBank::new(patterns, manifest.strategy, manifest.seed)
}

/// Writes `pattern_{index:04}.png`, the CSV and the manifest into `outdir`.
pub fn export_bank(bank: &PatternBank, outdir: &Path) -> Result<BankManifest> {
    fs::create_dir_all(outdir)?;
    for p in bank.patterns() {
        let (q, _) = quantize_8bit(&p.values);
        raster::write_gray_png(&q, &outdir.join(format!("pattern_{:04}.png", p.index)))?;
    }
    let csv = bank_to_csv(bank);
    fs::write(outdir.join(CSV_FILE), &csv)?;
    let manifest = BankManifest::for_bank(bank);
    fs::write(outdir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads back an exported directory, verifying the CSV digest.
pub fn import_bank(dir: &Path) -> Result<(PatternBank, BankManifest)> {
    let manifest = BankManifest::read(&dir.join(MANIFEST_FILE))?;
    let csv = fs::read_to_string(dir.join(&manifest.csv_file))?;
    let actual = sha256_hex(csv.as_bytes());
    if actual != manifest.csv_sha256 {
        return Err(Error::Digest { expected: manifest.csv_sha256.clone(), actual });
    }
    let bank = bank_from_csv(&csv, &manifest)?;
    Ok((bank, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::{make_hadamard_patterns, make_random_patterns, HadamardOrdering};

    #[test]
    fn csv_round_trip_is_exact() {
        let bank = make_random_patterns(3, (4, 5), 11).unwrap();
        let manifest = BankManifest::for_bank(&bank);
        let back = bank_from_csv(&bank_to_csv(&bank), &manifest).unwrap();
        assert_eq!(back, bank);
        assert_eq!(back.digest(), manifest.bank_digest);
    }

    #[test]
    fn csv_rejects_duplicates_and_gaps() {
        let bank = make_random_patterns(1, (2, 2), 1).unwrap();
        let m = BankManifest::for_bank(&bank);
        let dup = "index,row,col,value\n0,0,0,1\n0,0,0,2\n0,0,1,1\n0,1,0,1\n0,1,1,1\n";
        assert!(matches!(bank_from_csv(dup, &m), Err(Error::Parse { line: 3, .. })));
        let gap = "index,row,col,value\n0,0,0,1\n";
        assert!(bank_from_csv(gap, &m).is_err());
        assert!(bank_from_csv("a,b\n", &m).is_err());
    }

    #[test]
    fn quantization_bounds() {
        let bank = make_random_patterns(1, (8, 8), 5).unwrap();
        let v = &bank.patterns()[0].values;
        let (q, s) = quantize_8bit(v);
        let back = dequantize_8bit(&q, s);
        let step = (s.max - s.min) / 255.0;
        for (a, b) in back.iter().zip(v.iter()) {
            assert!((a - b).abs() <= step / 2.0 + 1e-12);
        }
        assert_eq!(q.iter().copied().min(), Some(0));
        assert_eq!(q.iter().copied().max(), Some(255));
    }

    #[test]
    fn complementary_pair_reconstructs_pattern() {
        let bank = make_hadamard_patterns(8, (4, 4), HadamardOrdering::Sequency).unwrap();
        for p in bank.patterns() {
            let (pos, neg) = dmd_complementary_pair(&p.values).unwrap();
            let diff = pos.mapv(|v| v as f64) - neg.mapv(|v| v as f64);
            assert_eq!(diff, p.values);
        }
        assert!(dmd_complementary_pair(&Array2::from_elem((2, 2), 0.5)).is_err());
    }

    #[test]
    fn export_and_import_directory() {
        let dir = tempfile::tempdir().unwrap();
        let bank = make_random_patterns(4, (8, 8), 2).unwrap();
        let manifest = export_bank(&bank, dir.path()).unwrap();
        assert_eq!(manifest.count, 4);
        for i in 0..4 {
            assert!(dir.path().join(format!("pattern_{i:04}.png")).exists());
        }
        let (back, m2) = import_bank(dir.path()).unwrap();
        assert_eq!(back, bank);
        assert_eq!(m2, manifest);

        let csv_path = dir.path().join(CSV_FILE);
        let mut csv = fs::read_to_string(&csv_path).unwrap();
        csv.push_str("0,0,0,1\n");
        fs::write(&csv_path, csv).unwrap();
        assert!(matches!(import_bank(dir.path()), Err(Error::Digest { .. })));
    }
}
