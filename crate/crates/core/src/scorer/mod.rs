//! Learning-free table matching.
//!
//! Join: the query's key-column embedding against every candidate column,
//! best cosine wins. Union: maximum-weight bipartite matching between query
//! and candidate columns, normalized by the query's column count.
//! Cosines are clamped into `[0, 1]` before use, so both scores live there
//! and anti-correlated columns never pair up.

mod hungarian;

use serde::{Deserialize, Serialize};

use crate::linalg;

pub use hungarian::{hungarian, Matching};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScoreError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("candidate has no columns")]
    EmptyCandidate,
    #[error("invalid weight {value} at ({row}, {col})")]
    InvalidWeight { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Join,
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableScore {
    pub value: f64,
    pub kind: ScoreKind,
}

/// `u·v / (|u| |v|)`, zero when either side is the zero vector.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, ScoreError> {
    if u.len() != v.len() {
        return Err(ScoreError::DimMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (linalg::norm(u), linalg::norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(linalg::dot(u, v) / (nu * nv))
}

fn clamped_cosine(u: &[f64], v: &[f64]) -> Result<f64, ScoreError> {
    Ok(cosine(u, v)?.clamp(0.0, 1.0))
}

/// Edge weights between query columns (rows) and candidate columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub weights: Vec<Vec<f64>>,
}

impl BipartiteGraph {
    pub fn build<V: AsRef<[f64]>>(query: &[V], candidate: &[V]) -> Result<Self, ScoreError> {
        let weights = query
            .iter()
            .map(|q| {
                candidate
                    .iter()
                    .map(|c| clamped_cosine(q.as_ref(), c.as_ref()))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BipartiteGraph { weights })
    }

    pub fn transpose(&self) -> Self {
        let cols = self.weights.first().map_or(0, Vec::len);
        BipartiteGraph {
            weights: (0..cols)
                .map(|j| self.weights.iter().map(|row| row[j]).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JoinMatch {
    pub score: TableScore,
    /// Candidate column that achieved the score (first one on ties).
    pub column: usize,
}

pub fn join_score<V: AsRef<[f64]>>(key: &[f64], candidate: &[V]) -> Result<JoinMatch, ScoreError> {
    if candidate.is_empty() {
        return Err(ScoreError::EmptyCandidate);
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for (j, col) in candidate.iter().enumerate() {
        let s = clamped_cosine(key, col.as_ref())?;
        if s > best.1 {
            best = (j, s);
        }
    }
    Ok(JoinMatch {
        score: TableScore {
            value: best.1,
            kind: ScoreKind::Join,
        },
        column: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnPair {
    pub query: usize,
    pub candidate: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnionMatch {
    pub score: TableScore,
    pub pairs: Vec<ColumnPair>,
}

pub fn union_score<V: AsRef<[f64]>>(query: &[V], candidate: &[V]) -> Result<UnionMatch, ScoreError> {
    if query.is_empty() || candidate.is_empty() {
        return Err(ScoreError::EmptyCandidate);
    }
    let graph = BipartiteGraph::build(query, candidate)?;
    let m = hungarian(&graph.weights)?;
    let pairs = m
        .pairs
        .iter()
        .map(|&(i, j)| ColumnPair {
            query: i,
            candidate: j,
            weight: graph.weights[i][j],
        })
        .collect();
    Ok(UnionMatch {
        score: TableScore {
            value: (m.total / query.len() as f64).clamp(0.0, 1.0),
            kind: ScoreKind::Union,
        },
        pairs,
    })
}
