//! Approximate nearest-neighbor retrieval over pool vectors.
//!
//! Similarity is the raw inner product: query vectors may carry all-zero
//! blocks (no condition, no query table) and a zero block contributes
//! exactly nothing to the score.

mod hnsw;
mod persist;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::linalg;

pub use hnsw::HnswIndex;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("vector dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid index parameters: {0}")]
    InvalidParams(String),
    #[error("corrupt index at byte {offset}: {reason}")]
    CorruptIndex { offset: u64, reason: String },
    #[error("unsupported index version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Out-degree bound on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 0,
        }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.m < 2 {
            return Err(IndexError::InvalidParams(format!("m must be >= 2, got {}", self.m)));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(IndexError::InvalidParams("ef values must be positive".into()));
        }
        Ok(())
    }

    pub fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.m
        } else {
            self.m
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub table_id: String,
    pub vector: Vec<f64>,
}

impl IndexEntry {
    pub fn new(table_id: impl Into<String>, vector: Vec<f64>) -> Self {
        IndexEntry {
            table_id: table_id.into(),
            vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub table_id: String,
    pub score: f64,
}

/// Score descending, then id ascending.
pub(crate) fn rank_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.table_id.cmp(&b.table_id))
}

/// Exact top-`n` by inner product with the same ordering as
/// [`HnswIndex::search`].
pub fn brute_force_search(entries: &[IndexEntry], query: &[f64], n: usize) -> Vec<SearchHit> {
    let mut hits: Vec<SearchHit> = entries
        .iter()
        .map(|e| SearchHit {
            table_id: e.table_id.clone(),
            score: linalg::dot(&e.vector, query),
        })
        .collect();
    hits.sort_by(rank_order);
    hits.truncate(n);
    hits
}
