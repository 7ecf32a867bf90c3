//! HTTP routes. Bodies are JSON; malformed bodies are 400s with the same
//! error envelope as every other failure:
//! `{"error": {"code": "...", "message": "..."}}`.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use nlctd_core::engine::{EngineConfig, Explanation, QueryEngine, ScoredTable, DEFAULT_CANDIDATES, DEFAULT_K};
use nlctd_core::eval::{evaluate_run, evaluate_run_parallel};
use nlctd_core::table::{
    load_benchmark, load_pool, parse_table_str, validate_query, QueryMode, QuerySpec, TableMetadata, TablePool,
    TableRecord,
};
use nlctd_core::trainer::{self, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::assistant::{route_intent, AssistantTurn};
use crate::error::ApiError;
use crate::process::{join_preview, union_preview, Preview};
use crate::state::{AppState, PoolEntry};

pub const SEARCH_RESPONSE_SCHEMA: &str = include_str!("../schema/search_response.schema.json");

/// Rows returned by the table preview endpoint.
pub const TABLE_PREVIEW_ROWS: usize = 50;

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/schema/search-response", get(schema))
        .route("/pools", get(list_pools).post(ingest))
        .route("/pools/{id}", get(pool_status))
        .route("/pools/{id}/index", post(build_index))
        .route("/pools/{id}/tables/{tid}", get(table_preview))
        .route("/pools/{id}/search", post(search))
        .route("/pools/{id}/explain/{tid}", post(explain))
        .route("/assistant/message", post(assistant))
        .route("/process", post(process))
        .route("/train", post(train))
        .route("/evaluate", post(evaluate))
        .route("/jobs/{id}", get(job))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let text = if body.iter().all(u8::is_ascii_whitespace) { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(text).map_err(|e| ApiError::bad_request("invalid_body", e))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn health(State(s): State<Shared>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "provider": s.settings.embedding.kind,
        "dim": s.embedder.dim(),
        "llm": s.settings.llm.is_some(),
    }))
}

async fn schema() -> impl IntoResponse {
    ([("content-type", "application/schema+json")], SEARCH_RESPONSE_SCHEMA)
}

#[derive(Debug, Serialize)]
struct TableSummary {
    table_id: String,
    caption: String,
    columns: Vec<String>,
    row_count: usize,
}

#[derive(Debug, Serialize)]
struct PoolStatus {
    pool_id: String,
    tables: usize,
    indexed: bool,
    busy: bool,
    source: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    table_list: Option<Vec<TableSummary>>,
}

fn status(e: &PoolEntry, with_tables: bool) -> PoolStatus {
    PoolStatus {
        pool_id: e.pool.pool_id.clone(),
        tables: e.pool.len(),
        indexed: e.index().is_some(),
        busy: e.is_busy(),
        source: e.source.clone(),
        table_list: with_tables.then(|| {
            e.pool
                .iter()
                .map(|t| TableSummary {
                    table_id: t.id.clone(),
                    caption: t.metadata.caption.clone(),
                    columns: t.header().into_iter().map(str::to_string).collect(),
                    row_count: t.row_count,
                })
                .collect()
        }),
    }
}

async fn list_pools(State(s): State<Shared>) -> Json<Vec<PoolStatus>> {
    Json(s.pools().iter().map(|e| status(e, false)).collect())
}

async fn pool_status(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<PoolStatus>> {
    let entry = s.pool(&id)?;
    Ok(Json(status(&entry, true)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineTable {
    id: String,
    csv: String,
    #[serde(default)]
    caption: String,
    #[serde(default)]
    description: String,
}

/// Either a server-side directory or inline CSV tables.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IngestRequest {
    #[serde(default)]
    path: Option<PathBuf>,
    #[serde(default)]
    pool_id: Option<String>,
    #[serde(default)]
    tables: Option<Vec<InlineTable>>,
}

async fn ingest(State(s): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<PoolStatus>)> {
    let req: IngestRequest = parse_body(&body)?;
    blocking(move || {
        let (pool, source) = match (req.path, req.tables) {
            (Some(path), None) => (load_pool(&path)?, Some(path)),
            (None, Some(tables)) => {
                if tables.is_empty() {
                    return Err(ApiError::bad_request("invalid_input", "tables is empty"));
                }
                let records = tables
                    .into_iter()
                    .map(|t| parse_table_str(&t.id, &t.csv, TableMetadata::new(t.caption, t.description)))
                    .collect::<Result<Vec<_>, _>>()?;
                (TablePool::from_tables(req.pool_id.clone().unwrap_or_default(), records)?, None)
            }
            _ => return Err(ApiError::bad_request("invalid_body", "give exactly one of path or tables")),
        };
        let entry = s.add_pool(pool, source, req.pool_id)?;
        Ok((StatusCode::CREATED, Json(status(&entry, false))))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexRequest {
    /// Directory to persist the built index into.
    #[serde(default)]
    save_to: Option<PathBuf>,
}

async fn build_index(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: IndexRequest = parse_body(&body)?;
    let entry = s.pool(&id)?;
    let guard = entry.acquire()?;
    blocking(move || {
        let _guard = guard;
        let start = Instant::now();
        let index = nlctd_core::engine::SearchIndex::build(&entry.pool, &s.embedder, s.settings.hnsw)?;
        if let Some(dir) = &req.save_to {
            index.save(dir)?;
        }
        let tables = index.len();
        entry.set_index(index);
        Ok(Json(json!({
            "pool_id": id,
            "status": "ready",
            "tables": tables,
            "elapsed_ms": start.elapsed().as_secs_f64() * 1e3,
            "saved_to": req.save_to,
        })))
    })
    .await
}

fn pool_table<'a>(entry: &'a PoolEntry, tid: &str) -> ApiResult<&'a TableRecord> {
    entry
        .pool
        .get(tid)
        .ok_or_else(|| ApiError::not_found("unknown_table", format!("no table {tid:?} in pool {:?}", entry.pool.pool_id)))
}

async fn table_preview(State(s): State<Shared>, Path((id, tid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let entry = s.pool(&id)?;
    let t = pool_table(&entry, &tid)?;
    let n = t.row_count.min(TABLE_PREVIEW_ROWS);
    Ok(Json(json!({
        "table_id": t.id,
        "caption": t.metadata.caption,
        "description": t.metadata.description,
        "columns": t.header(),
        "kinds": t.columns.iter().map(|c| c.inferred_kind).collect::<Vec<_>>(),
        "rows": (0..n).map(|i| t.row(i)).collect::<Vec<_>>(),
        "row_count": t.row_count,
        "truncated": t.row_count > n,
    })))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchRequest {
    pub mode: QueryMode,
    #[serde(default)]
    pub condition: Option<String>,
    /// Inline CSV with a header row.
    #[serde(default)]
    pub query_table: Option<String>,
    #[serde(default)]
    pub key_column: Option<String>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub n_candidates: Option<usize>,
}

impl SearchRequest {
    pub fn to_spec(&self) -> ApiResult<QuerySpec> {
        let query_table = self
            .query_table
            .as_deref()
            .map(|csv| parse_table_str("query", csv, TableMetadata::default()))
            .transpose()?;
        let spec = QuerySpec {
            mode: self.mode,
            query_table,
            condition: self.condition.clone().filter(|c| !c.trim().is_empty()),
            key_column: self.key_column.clone().filter(|k| !k.trim().is_empty()),
            k: self.k.unwrap_or(DEFAULT_K),
        };
        validate_query(&spec)?;
        Ok(spec)
    }

    pub fn config(&self, k: usize) -> ApiResult<EngineConfig> {
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(ApiError::bad_request("invalid_query", format!("lambda must be a finite number >= 0, got {l}")));
            }
        }
        let config = EngineConfig {
            n_candidates: self.n_candidates.unwrap_or(DEFAULT_CANDIDATES).max(k),
            lambda: self.lambda,
            k,
        };
        if self.n_candidates.is_some_and(|n| n < k) {
            return Err(ApiError::bad_request("invalid_query", "n_candidates must be >= k"));
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub rank: usize,
    pub table_id: String,
    pub caption: String,
    pub rho: f64,
    pub rho_t: Option<f64>,
    pub rho_c: Option<f64>,
    pub join_column: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResponse {
    pub pool_id: String,
    pub mode: QueryMode,
    pub condition: Option<String>,
    pub k: usize,
    pub lambda: f64,
    pub n_candidates: usize,
    pub elapsed_ms: f64,
    pub results: Vec<SearchResult>,
}

pub fn search_results(pool: &TablePool, scored: Vec<ScoredTable>) -> Vec<SearchResult> {
    scored
        .into_iter()
        .enumerate()
        .map(|(i, s)| SearchResult {
            rank: i + 1,
            caption: pool.get(&s.table_id).map(|t| t.metadata.caption.clone()).unwrap_or_default(),
            table_id: s.table_id,
            rho: s.rho,
            rho_t: s.rho_t,
            rho_c: s.rho_c,
            join_column: s.join_column,
        })
        .collect()
}

async fn search(State(s): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SearchResponse>> {
    let req: SearchRequest = parse_body(&body)?;
    let entry = s.pool(&id)?;
    let spec = req.to_spec()?;
    let config = req.config(spec.k)?;
    let index = entry.index().ok_or(nlctd_core::engine::EngineError::IndexNotReady)?;
    blocking(move || {
        let model = entry.model();
        let lambda = config.lambda.unwrap_or(model.lambda);
        let n_candidates = config.n_candidates;
        let engine = QueryEngine::new(&entry.pool, Some(&index), &model, &s.embedder, config);
        let start = Instant::now();
        let scored = engine.execute(&spec)?;
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(Json(SearchResponse {
            pool_id: id,
            mode: spec.mode,
            condition: spec.condition.clone(),
            k: spec.k,
            lambda,
            n_candidates,
            elapsed_ms,
            results: search_results(&entry.pool, scored),
        }))
    })
    .await
}

#[derive(Debug, Serialize)]
struct ExplainResponse {
    #[serde(flatten)]
    explanation: Explanation,
    caption: String,
    lambda: f64,
}

async fn explain(
    State(s): State<Shared>,
    Path((id, tid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<ExplainResponse>> {
    let req: SearchRequest = parse_body(&body)?;
    let entry = s.pool(&id)?;
    let caption = pool_table(&entry, &tid)?.metadata.caption.clone();
    let spec = req.to_spec()?;
    let config = req.config(spec.k)?;
    let index = entry.index().ok_or(nlctd_core::engine::EngineError::IndexNotReady)?;
    blocking(move || {
        let model = entry.model();
        let lambda = config.lambda.unwrap_or(model.lambda);
        let engine = QueryEngine::new(&entry.pool, Some(&index), &model, &s.embedder, config);
        Ok(Json(ExplainResponse {
            explanation: engine.explain(&spec, &tid)?,
            caption,
            lambda,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AssistantRequest {
    text: String,
}

async fn assistant(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<AssistantTurn>> {
    let req: AssistantRequest = parse_body(&body)?;
    blocking(move || Ok(Json(route_intent(&req.text, s.settings.llm.as_ref())))).await
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProcessOp {
    UnionPreview,
    JoinPreview,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProcessRequest {
    op: ProcessOp,
    pool_id: String,
    /// Left side: a pool table or an inline CSV table.
    #[serde(default)]
    left_table_id: Option<String>,
    #[serde(default)]
    left_table: Option<String>,
    right_table_id: String,
    #[serde(default)]
    left_key: Option<String>,
    #[serde(default)]
    right_key: Option<String>,
}

async fn process(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<Preview>> {
    let req: ProcessRequest = parse_body(&body)?;
    let entry = s.pool(&req.pool_id)?;
    blocking(move || {
        let right = pool_table(&entry, &req.right_table_id)?;
        let inline;
        let left = match (&req.left_table_id, &req.left_table) {
            (Some(id), None) => pool_table(&entry, id)?,
            (None, Some(csv)) => {
                inline = parse_table_str("query", csv, TableMetadata::default())?;
                &inline
            }
            _ => return Err(ApiError::bad_request("invalid_body", "give exactly one of left_table_id or left_table")),
        };
        let preview = match req.op {
            ProcessOp::UnionPreview => union_preview(left, right, &s.embedder)?,
            ProcessOp::JoinPreview => join_preview(
                left,
                right,
                req.left_key.as_deref().unwrap_or(""),
                req.right_key.as_deref().unwrap_or(""),
            )?,
        };
        Ok(Json(preview))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    pool_id: String,
    /// Benchmark directory on the server.
    benchmark: PathBuf,
    #[serde(default)]
    epochs: Option<usize>,
    #[serde(default)]
    learning_rate: Option<f64>,
    #[serde(default)]
    batch_size: Option<usize>,
    #[serde(default)]
    negatives: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    optimize_lambda: Option<bool>,
    /// Checkpoint path to write the trained model to.
    #[serde(default)]
    save_to: Option<PathBuf>,
}

fn accepted(job_id: String) -> (StatusCode, Json<Value>) {
    (StatusCode::ACCEPTED, Json(json!({ "job_id": job_id })))
}

async fn train(State(s): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: TrainRequest = parse_body(&body)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: req.learning_rate.unwrap_or(defaults.learning_rate),
        epochs: req.epochs.unwrap_or(defaults.epochs),
        batch_size: req.batch_size.unwrap_or(defaults.batch_size),
        negatives_per_query: req.negatives.unwrap_or(defaults.negatives_per_query),
        seed: req.seed.unwrap_or(defaults.seed),
        optimize_lambda: req.optimize_lambda.unwrap_or(defaults.optimize_lambda),
    };
    cfg.validate().map_err(|e| ApiError::bad_request("invalid_config", e))?;
    let entry = s.pool(&req.pool_id)?;
    let index = entry.index().ok_or(nlctd_core::engine::EngineError::IndexNotReady)?;
    let bench = load_benchmark(&req.benchmark)?;
    let guard = entry.acquire()?;
    let state = s.clone();
    let job = s.spawn_job("train", &req.pool_id, move || {
        let _guard = guard;
        let model = entry.model();
        let engine = QueryEngine::new(&entry.pool, Some(&index), &model, &state.embedder, EngineConfig::default());
        let examples = engine
            .training_examples(&bench, cfg.negatives_per_query, cfg.seed)
            .map_err(|e| e.to_string())?;
        let (trained, curve) = trainer::train((*model).clone(), &examples, &cfg).map_err(|e| e.to_string())?;
        if let Some(path) = &req.save_to {
            trainer::save_checkpoint(&trained, path).map_err(|e| e.to_string())?;
        }
        let lambda = trained.lambda;
        entry.set_model(trained);
        Ok(json!({
            "examples": examples.len(),
            "initial_loss": curve.initial,
            "final_loss": curve.last(),
            "loss_curve": curve.epochs,
            "lambda": lambda,
            "saved_to": req.save_to,
        }))
    });
    Ok(accepted(job))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateRequest {
    pool_id: String,
    benchmark: PathBuf,
    /// Parallel runs give the same NDCG with contended latencies.
    #[serde(default)]
    parallel: bool,
    #[serde(default)]
    n_candidates: Option<usize>,
    #[serde(default)]
    lambda: Option<f64>,
    /// Directory for `report.txt` and `results.json`.
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

async fn evaluate(State(s): State<Shared>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: EvaluateRequest = parse_body(&body)?;
    let entry = s.pool(&req.pool_id)?;
    let index = entry.index().ok_or(nlctd_core::engine::EngineError::IndexNotReady)?;
    let bench = load_benchmark(&req.benchmark)?;
    let config = EngineConfig {
        n_candidates: req.n_candidates.unwrap_or(DEFAULT_CANDIDATES),
        lambda: req.lambda,
        k: DEFAULT_K,
    };
    config.validate()?;
    let state = s.clone();
    let job = s.spawn_job("evaluate", &req.pool_id, move || {
        let model = entry.model();
        let engine = QueryEngine::new(&entry.pool, Some(&index), &model, &state.embedder, config);
        let run = if req.parallel {
            evaluate_run_parallel(&engine, &bench)
        } else {
            evaluate_run(&engine, &bench)
        }
        .map_err(|e| e.to_string())?;
        if let Some(dir) = &req.out_dir {
            run.write(dir).map_err(|e| e.to_string())?;
        }
        serde_json::to_value(&run).map_err(|e| e.to_string())
    });
    Ok(accepted(job))
}

async fn job(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<crate::state::Job>> {
    Ok(Json(s.job(&id)?))
}
