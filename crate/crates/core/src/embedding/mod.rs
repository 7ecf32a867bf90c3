//! Text, column and table embeddings behind a pluggable provider.
//!
//! A provider maps text to a fixed-dimension vector. Everything above that
//! (column serialization, table content vectors, the concatenated pool
//! vector that gets indexed) is provider-independent and lives on
//! [`Embedder`].

mod hashing;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::table::{ColumnData, TableMetadata, TableRecord};

pub use hashing::HashingProvider;
pub use remote::RemoteProvider;

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_MAX_CELLS: usize = 64;
pub const MIN_DIM: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid embedding configuration: {0}")]
    InvalidConfig(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds each text to a unit vector, or the zero vector when the text
    /// carries no tokens.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError>;

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        Ok(out.pop().unwrap_or_else(|| vec![0.0; self.dim()]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hashing,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: ProviderKind,
    pub dim: usize,
    pub max_cells_per_column: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_in_flight() -> usize {
    8
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            kind: ProviderKind::Hashing,
            dim: DEFAULT_DIM,
            max_cells_per_column: DEFAULT_MAX_CELLS,
            seed: 0,
            endpoint: None,
            max_in_flight: default_in_flight(),
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn hashing(dim: usize, seed: u64) -> Self {
        EmbeddingProviderConfig {
            dim,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim < MIN_DIM {
            return Err(EmbedError::InvalidConfig(format!("dim must be >= {MIN_DIM}, got {}", self.dim)));
        }
        if self.max_cells_per_column == 0 {
            return Err(EmbedError::InvalidConfig("max_cells_per_column must be positive".into()));
        }
        if self.kind == ProviderKind::Remote && self.endpoint.is_none() {
            return Err(EmbedError::InvalidConfig("remote provider needs an endpoint".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Embedder, EmbedError> {
        self.validate()?;
        let provider: Arc<dyn EmbeddingProvider> = match self.kind {
            ProviderKind::Hashing => Arc::new(HashingProvider::new(self.dim, self.seed)),
            ProviderKind::Remote => Arc::new(RemoteProvider::new(
                self.endpoint.clone().unwrap_or_default(),
                self.dim,
                self.max_in_flight,
            )),
        };
        Ok(Embedder::new(provider, self.max_cells_per_column))
    }
}

/// Concatenation of a table's content and metadata embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolVector {
    pub content: Vec<f64>,
    pub metadata: Vec<f64>,
    pub concatenated: Vec<f64>,
}

impl PoolVector {
    pub fn new(content: Vec<f64>, metadata: Vec<f64>) -> Self {
        let mut concatenated = Vec::with_capacity(content.len() + metadata.len());
        concatenated.extend_from_slice(&content);
        concatenated.extend_from_slice(&metadata);
        PoolVector {
            content,
            metadata,
            concatenated,
        }
    }
}

/// Everything the online phase needs about one table: per-column vectors for
/// the scorers and the pool vector for the index.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEmbedding {
    pub columns: Vec<Vec<f64>>,
    pub pool: PoolVector,
}

/// `caption | name | v1, v2, ...` over the first `max_cells` distinct
/// non-empty cells. An empty caption leaves a leading `| `; an empty column
/// drops the value field.
pub fn serialize_column(col: &ColumnData, meta: &TableMetadata, max_cells: usize) -> String {
    let mut seen = std::collections::HashSet::new();
    let values: Vec<&str> = col
        .values
        .iter()
        .map(|v| v.trim())
        .filter(|v| !v.is_empty() && seen.insert(*v))
        .take(max_cells)
        .collect();
    let caption = meta.caption.trim();
    let mut out = if caption.is_empty() {
        format!("| {}", col.name)
    } else {
        format!("{caption} | {}", col.name)
    };
    if !values.is_empty() {
        out.push_str(" | ");
        out.push_str(&values.join(", "));
    }
    out
}

#[derive(Clone)]
pub struct Embedder {
    provider: Arc<dyn EmbeddingProvider>,
    max_cells: usize,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("dim", &self.dim())
            .field("max_cells", &self.max_cells)
            .finish()
    }
}

impl Embedder {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, max_cells: usize) -> Self {
        Embedder { provider, max_cells }
    }

    pub fn hashing(dim: usize, seed: u64) -> Self {
        Embedder::new(Arc::new(HashingProvider::new(dim, seed)), DEFAULT_MAX_CELLS)
    }

    pub fn dim(&self) -> usize {
        self.provider.dim()
    }

    pub fn max_cells(&self) -> usize {
        self.max_cells
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let v = self.provider.embed_text(text)?;
        self.check_dim(&v)?;
        Ok(v)
    }

    pub fn embed_column(&self, col: &ColumnData, meta: &TableMetadata) -> Result<Vec<f64>, EmbedError> {
        self.embed_text(&serialize_column(col, meta, self.max_cells))
    }

    /// Per-column embeddings of a table, in column order.
    pub fn embed_columns(&self, table: &TableRecord) -> Result<Vec<Vec<f64>>, EmbedError> {
        let texts: Vec<String> = table
            .columns
            .iter()
            .map(|c| serialize_column(c, &table.metadata, self.max_cells))
            .collect();
        let out = self.provider.embed_batch(&texts)?;
        for v in &out {
            self.check_dim(v)?;
        }
        Ok(out)
    }

    /// Normalized mean of the table's column embeddings.
    pub fn table_content_vector(&self, table: &TableRecord) -> Result<Vec<f64>, EmbedError> {
        Ok(linalg::normalized_mean(&self.embed_columns(table)?, self.dim()))
    }

    pub fn metadata_vector(&self, meta: &TableMetadata) -> Result<Vec<f64>, EmbedError> {
        self.embed_text(&meta.text())
    }

    pub fn pool_vector(&self, table: &TableRecord) -> Result<PoolVector, EmbedError> {
        Ok(self.embed_table(table)?.pool)
    }

    pub fn embed_table(&self, table: &TableRecord) -> Result<TableEmbedding, EmbedError> {
        let mut texts: Vec<String> = table
            .columns
            .iter()
            .map(|c| serialize_column(c, &table.metadata, self.max_cells))
            .collect();
        texts.push(table.metadata.text());
        let mut out = self.provider.embed_batch(&texts)?;
        for v in &out {
            self.check_dim(v)?;
        }
        let metadata = out.pop().unwrap_or_else(|| vec![0.0; self.dim()]);
        let content = linalg::normalized_mean(&out, self.dim());
        Ok(TableEmbedding {
            columns: out,
            pool: PoolVector::new(content, metadata),
        })
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), EmbedError> {
        if v.len() != self.dim() {
            return Err(EmbedError::DimMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(())
    }
}
