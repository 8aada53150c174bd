//! SHA-256 helpers used for bank ids, checkpoint trailers and cache keys.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Incremental hasher over f64 bit patterns; two arrays hash equal iff they
/// are bit-identical.
#[derive(Default)]
pub struct FloatHasher {
    inner: Sha256,
}

impl FloatHasher {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tag(&mut self, label: &str) -> &mut Self {
        self.inner.update((label.len() as u64).to_le_bytes());
        self.inner.update(label.as_bytes());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.inner.update((v as u64).to_le_bytes());
        self
    }

    pub fn f64s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) -> &mut Self {
        for v in values {
            self.inner.update(v.to_bits().to_le_bytes());
        }
        self
    }

    pub fn finish(&mut self) -> String {
        hex::encode(std::mem::take(&mut self.inner).finalize())
    }
}
