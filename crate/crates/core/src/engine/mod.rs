//! Online query pipeline: embed the query, pull `N` candidates from the
//! index, score each with the table scorer and the condition scorer, fuse
//! as `rho = rho_c + lambda * rho_t`, sort and cut to `k`.
//!
//! One index serves all three modes. Absent query parts become zero blocks
//! in the query vector, which contribute nothing to the inner product, so
//! nl_only searches the metadata subspace and table-only queries the content
//! subspace. Join queries put the key column embedding in the content block.

mod catalog;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbedError, Embedder, TableEmbedding};
use crate::index::{IndexError, SearchHit};
use crate::nlc::{CrossFusionModel, ModelError};
use crate::scorer::{self, ScoreError};
use crate::table::{validate_query, Benchmark, QueryMode, QuerySpec, TableError, TablePool};
use crate::trainer::{sample_candidates, TrainCandidate, TrainExample};

pub use catalog::{SearchIndex, CATALOG_FILE, INDEX_FILE};

pub const DEFAULT_CANDIDATES: usize = 100;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("index not built for this pool")]
    IndexNotReady,
    #[error("unknown table {0:?}")]
    UnknownTable(String),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt catalog: {0}")]
    CorruptCatalog(String),
    #[error(transparent)]
    Query(#[from] TableError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Candidates pulled from the index before reranking.
    pub n_candidates: usize,
    /// Replaces the model's lambda when set.
    pub lambda: Option<f64>,
    pub k: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_candidates: DEFAULT_CANDIDATES,
            lambda: None,
            k: DEFAULT_K,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.k == 0 || self.n_candidates < self.k {
            return Err(EngineError::InvalidConfig(format!(
                "need 1 <= k <= n_candidates, got k={} n_candidates={}",
                self.k, self.n_candidates
            )));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(EngineError::InvalidConfig(format!("lambda must be >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTable {
    pub table_id: String,
    pub rho_t: Option<f64>,
    pub rho_c: Option<f64>,
    pub rho: f64,
    /// Candidate column matched to the key (join mode).
    pub join_column: Option<String>,
}

/// One matched edge of the union matching, by column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMatch {
    pub query_column: String,
    pub candidate_column: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    #[serde(flatten)]
    pub scored: ScoredTable,
    pub mode: QueryMode,
    /// Union mode: one entry per matched edge.
    pub column_matches: Vec<ColumnMatch>,
}

/// Embedded query parts.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    pub mode: QueryMode,
    pub columns: Vec<Vec<f64>>,
    pub column_names: Vec<String>,
    /// Key column embedding (join mode).
    pub key: Option<Vec<f64>>,
    pub condition: Option<Vec<f64>>,
    /// `[content | metadata]` with absent blocks zeroed.
    pub vector: Vec<f64>,
}

pub fn embed_query(spec: &QuerySpec, embedder: &Embedder) -> Result<QueryEmbedding, EngineError> {
    validate_query(spec)?;
    let d = embedder.dim();
    let condition = spec.condition_text().map(|c| embedder.embed_text(c)).transpose()?;
    let (columns, column_names, content, key) = match spec.effective_table() {
        None => (Vec::new(), Vec::new(), vec![0.0; d], None),
        Some(table) => {
            let columns = embedder.embed_columns(table)?;
            let names = table.columns.iter().map(|c| c.name.clone()).collect();
            if spec.mode == QueryMode::NlcJoin {
                let key_name = spec.key_column.as_deref().unwrap_or_default();
                let idx = table
                    .column_index(key_name)
                    .ok_or_else(|| TableError::UnknownColumn(key_name.to_string()))?;
                let key = columns[idx].clone();
                (columns, names, key.clone(), Some(key))
            } else {
                let content = crate::linalg::normalized_mean(&columns, d);
                (columns, names, content, None)
            }
        }
    };
    let mut vector = content;
    vector.extend_from_slice(condition.as_deref().unwrap_or(&vec![0.0; d]));
    Ok(QueryEmbedding {
        mode: spec.mode,
        columns,
        column_names,
        key,
        condition,
        vector,
    })
}

/// The `2d` query vector used for candidate retrieval.
pub fn build_query_vector(spec: &QuerySpec, embedder: &Embedder) -> Result<Vec<f64>, EngineError> {
    Ok(embed_query(spec, embedder)?.vector)
}

struct CandidateScore {
    scored: ScoredTable,
    column_matches: Vec<ColumnMatch>,
}

fn score_candidate(
    q: &QueryEmbedding,
    table_id: &str,
    cand: &TableEmbedding,
    pool: &TablePool,
    model: &CrossFusionModel,
    lambda: f64,
) -> Result<CandidateScore, EngineError> {
    let column_name = |j: usize| {
        pool.get(table_id)
            .and_then(|t| t.columns.get(j))
            .map_or_else(|| format!("#{j}"), |c| c.name.clone())
    };
    let mut join_column = None;
    let mut column_matches = Vec::new();
    let rho_t = match q.mode {
        QueryMode::NlOnly => None,
        QueryMode::NlcJoin => {
            let key = q.key.as_deref().expect("join query carries a key embedding");
            let m = scorer::join_score(key, &cand.columns)?;
            join_column = Some(column_name(m.column));
            Some(m.score.value)
        }
        QueryMode::NlcUnion => {
            let m = scorer::union_score(&q.columns, &cand.columns)?;
            column_matches = m
                .pairs
                .iter()
                .map(|p| ColumnMatch {
                    query_column: q.column_names[p.query].clone(),
                    candidate_column: column_name(p.candidate),
                    weight: p.weight,
                })
                .collect();
            Some(m.score.value)
        }
    };
    let rho_c = q
        .condition
        .as_deref()
        .map(|c| model.condition_score(&cand.columns, &cand.pool.metadata, c))
        .transpose()?
        .map(|s| s.value);
    let rho = rho_c.unwrap_or(0.0) + lambda * rho_t.unwrap_or(0.0);
    Ok(CandidateScore {
        scored: ScoredTable {
            table_id: table_id.to_string(),
            rho_t,
            rho_c,
            rho,
            join_column,
        },
        column_matches,
    })
}

/// `rho` descending, ties by `table_id` ascending.
pub fn rank(results: &mut [ScoredTable]) {
    results.sort_by(|a, b| b.rho.total_cmp(&a.rho).then_with(|| a.table_id.cmp(&b.table_id)));
}

/// Frozen state needed to answer queries over one pool.
#[derive(Debug, Clone)]
pub struct QueryEngine<'a> {
    pub pool: &'a TablePool,
    pub index: Option<&'a SearchIndex>,
    pub model: &'a CrossFusionModel,
    pub embedder: &'a Embedder,
    pub config: EngineConfig,
}

impl<'a> QueryEngine<'a> {
    pub fn new(
        pool: &'a TablePool,
        index: Option<&'a SearchIndex>,
        model: &'a CrossFusionModel,
        embedder: &'a Embedder,
        config: EngineConfig,
    ) -> Self {
        QueryEngine {
            pool,
            index,
            model,
            embedder,
            config,
        }
    }

    fn ready(&self) -> Result<&'a SearchIndex, EngineError> {
        self.config.validate()?;
        let index = self.index.ok_or(EngineError::IndexNotReady)?;
        if self.model.dim != self.embedder.dim() || index.dim != self.embedder.dim() {
            return Err(EngineError::InvalidConfig(format!(
                "dimension mismatch: model {}, index {}, provider {}",
                self.model.dim,
                index.dim,
                self.embedder.dim()
            )));
        }
        Ok(index)
    }

    fn lambda(&self) -> f64 {
        self.config.lambda.unwrap_or(self.model.lambda)
    }

    /// Candidate ids from the index for an embedded query.
    pub fn retrieve(&self, q: &QueryEmbedding, n: usize) -> Result<Vec<SearchHit>, EngineError> {
        Ok(self.ready()?.hnsw.search(&q.vector, n)?)
    }

    /// Scores every candidate without truncating, sorted.
    pub fn score_all(&self, spec: &QuerySpec) -> Result<Vec<ScoredTable>, EngineError> {
        let index = self.ready()?;
        let q = embed_query(spec, self.embedder)?;
        let n = self.config.n_candidates.max(spec.k);
        let hits = index.hnsw.search(&q.vector, n)?;
        let lambda = self.lambda();
        let mut results = hits
            .par_iter()
            .map(|hit| {
                let cand = index
                    .get(&hit.table_id)
                    .ok_or_else(|| EngineError::UnknownTable(hit.table_id.clone()))?;
                score_candidate(&q, &hit.table_id, cand, self.pool, self.model, lambda).map(|c| c.scored)
            })
            .collect::<Result<Vec<_>, _>>()?;
        rank(&mut results);
        Ok(results)
    }

    pub fn execute(&self, spec: &QuerySpec) -> Result<Vec<ScoredTable>, EngineError> {
        let mut results = self.score_all(spec)?;
        results.truncate(spec.k);
        Ok(results)
    }

    /// Training examples for every query that has a condition. Each
    /// candidate set holds the query's positive qrels plus `negatives` ids
    /// sampled from what the index retrieves for it (hard negatives).
    /// Labels are grades divided by the benchmark's max grade.
    pub fn training_examples(
        &self,
        bench: &Benchmark,
        negatives: usize,
        seed: u64,
    ) -> Result<Vec<TrainExample>, EngineError> {
        let index = self.ready()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(bench.queries.len());
        for bq in &bench.queries {
            let q = embed_query(&bq.spec, self.embedder)?;
            let Some(condition) = q.condition.clone() else {
                log::warn!("query {} has no condition; skipped for training", bq.id);
                continue;
            };
            let grades: HashMap<&str, u32> = bench
                .qrels_for(&bq.id)
                .map(|g| (g.table_id.as_str(), g.relevance))
                .collect();
            let mut positives: Vec<String> = grades
                .iter()
                .filter(|(_, &g)| g > 0)
                .map(|(id, _)| id.to_string())
                .collect();
            positives.sort();
            let retrieved: Vec<String> = index
                .hnsw
                .search(&q.vector, self.config.n_candidates.max(negatives))?
                .into_iter()
                .map(|h| h.table_id)
                .collect();
            let ids = sample_candidates(&positives, &retrieved, negatives, &mut rng);
            let candidates = ids
                .into_iter()
                .map(|id| {
                    let cand = index.get(&id).ok_or_else(|| EngineError::UnknownTable(id.clone()))?;
                    let scored = score_candidate(&q, &id, cand, self.pool, self.model, 1.0)?.scored;
                    let grade = grades.get(id.as_str()).copied().unwrap_or(0);
                    Ok(TrainCandidate {
                        table_id: id,
                        columns: cand.columns.clone(),
                        metadata: cand.pool.metadata.clone(),
                        table_score: scored.rho_t.unwrap_or(0.0),
                        label: f64::from(grade) / f64::from(bench.max_grade.max(1)),
                    })
                })
                .collect::<Result<Vec<_>, EngineError>>()?;
            out.push(TrainExample {
                query_id: bq.id.clone(),
                condition,
                candidates,
            });
        }
        Ok(out)
    }

    /// Recomputes one table's score with its column-level match details.
    pub fn explain(&self, spec: &QuerySpec, table_id: &str) -> Result<Explanation, EngineError> {
        let index = self.ready()?;
        let cand = index
            .get(table_id)
            .ok_or_else(|| EngineError::UnknownTable(table_id.to_string()))?;
        let q = embed_query(spec, self.embedder)?;
        let c = score_candidate(&q, table_id, cand, self.pool, self.model, self.lambda())?;
        Ok(Explanation {
            scored: c.scored,
            mode: spec.mode,
            column_matches: c.column_matches,
        })
    }
}
