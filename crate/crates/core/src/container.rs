//! Versioned binary container shared by checkpoints and dataset caches.
//!
//! ```text
//! magic        8 bytes
//! version      u32 LE
//! header_len   u64 LE
//! header       JSON, header_len bytes
//! payload      remaining bytes up to the trailer
//! trailer      32-byte SHA-256 of everything before it
//! ```

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

const TRAILER: usize = 32;
const PREFIX: usize = 8 + 4 + 8;

pub fn encode(magic: &[u8; 8], version: u32, header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload.len() + TRAILER);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    seal(out)
}

/// Appends the digest trailer to a container body.
pub fn seal(mut body: Vec<u8>) -> Vec<u8> {
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    body
}

/// Recomputes the trailer of `bytes` (for fuzzing decoders past the digest).
pub fn reseal(bytes: &[u8]) -> Vec<u8> {
    seal(bytes[..bytes.len().saturating_sub(TRAILER)].to_vec())
}

/// Splits a container into `(header, payload)` after checking magic, version
/// and the digest trailer.
pub fn decode<'a>(bytes: &'a [u8], magic: &[u8; 8], version: u32) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < PREFIX + TRAILER {
        return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER);
    let actual = Sha256::digest(body);
    if actual.as_slice() != trailer {
        return Err(Error::Digest { expected: hex::encode(trailer), actual: hex::encode(actual) });
    }
    let found = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::Version { found, expected: version });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes"));
    let rest = &body[PREFIX..];
    if header_len > rest.len() as u64 {
        return Err(Error::Checkpoint(format!("header length {header_len} exceeds file")));
    }
    Ok(rest.split_at(header_len as usize))
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn f64s_to_le(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

pub fn le_to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of f64 values".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}
