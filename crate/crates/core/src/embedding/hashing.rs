use std::hash::Hasher;

use fnv::FnvHasher;

use super::{EmbedError, EmbeddingProvider};
use crate::linalg;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Signed feature hashing over lowercase alphanumeric tokens.
///
/// Each token lands on `h1(token) mod dim` with sign `(-1)^(h2(token) mod 2)`;
/// the accumulated vector is L2-normalized. `h1` and `h2` are FNV-1a with
/// seed-derived offset bases, each passed through a 64-bit finalizer so the
/// low bits are usable.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dim: usize,
    key_index: u64,
    key_sign: u64,
}

impl HashingProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashingProvider {
            dim,
            key_index: FNV_OFFSET ^ mix64(seed),
            key_sign: FNV_OFFSET ^ mix64(seed ^ 0x9e37_79b9_7f4a_7c15),
        }
    }

    fn hash(key: u64, token: &str) -> u64 {
        let mut h = FnvHasher::with_key(key);
        h.write(token.as_bytes());
        mix64(h.finish())
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokens(text) {
            let idx = (Self::hash(self.key_index, &token) % self.dim as u64) as usize;
            let sign = if Self::hash(self.key_sign, &token) % 2 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        linalg::normalize(&mut v);
        v
    }
}

impl EmbeddingProvider for HashingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

/// Lowercased maximal runs of alphanumeric characters.
pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

// murmur3 fmix64
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}
