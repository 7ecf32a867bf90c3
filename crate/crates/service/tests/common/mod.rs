#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use nlctd_core::embedding::{Embedder, EmbeddingProviderConfig};
use nlctd_core::engine::{EngineConfig, QueryEngine, SearchIndex};
use nlctd_core::index::HnswParams;
use nlctd_core::nlc::{CrossFusionModel, ModelConfig};
use nlctd_core::synth::{planted_benchmark, PlantedConfig};
use nlctd_core::table::{table_to_csv, TablePool};
use nlctd_core::trainer::{save_checkpoint, train, TrainConfig};
use nlctd_service::{router, AppState, Settings};
use serde_json::{json, Value};
use tower::ServiceExt;

pub const DIM: usize = 256;

pub fn settings() -> Settings {
    Settings::new(EmbeddingProviderConfig::hashing(DIM, 0))
}

pub fn app_with(settings: Settings) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(settings).unwrap());
    (router(state.clone()), state)
}

pub fn app() -> Router {
    app_with(settings()).0
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, uri, Some(body)).await
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

/// Inline-ingest body for a whole pool.
pub fn inline_pool(pool: &TablePool, pool_id: &str) -> Value {
    let tables: Vec<Value> = pool
        .iter()
        .map(|t| {
            json!({
                "id": t.id,
                "csv": table_to_csv(t).unwrap(),
                "caption": t.metadata.caption,
                "description": t.metadata.description,
            })
        })
        .collect();
    json!({"pool_id": pool_id, "tables": tables})
}

/// Ingests and indexes `pool` under `pool_id`.
pub async fn ready_pool(app: &Router, pool: &TablePool, pool_id: &str) {
    let (s, v) = post(app, "/pools", inline_pool(pool, pool_id)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let (s, v) = post(app, &format!("/pools/{pool_id}/index"), json!({})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
}

pub async fn wait_job(app: &Router, id: &str) -> Value {
    for _ in 0..1200 {
        let (s, v) = get(app, &format!("/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        if v["status"] != "running" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("job {id} did not finish");
}

/// Checkpoint trained on a 300-query planted split disjoint from the
/// 50-table fixture (`planted_benchmark` seed 0, 10 queries).
pub fn trained_checkpoint() -> PathBuf {
    static PATH: OnceLock<PathBuf> = OnceLock::new();
    PATH.get_or_init(|| {
        let embedder = Embedder::hashing(DIM, 0);
        let split = planted_benchmark(&PlantedConfig {
            queries: 300,
            seed: 1000,
            ..PlantedConfig::default()
        });
        let index = SearchIndex::build(&split.pool, &embedder, HnswParams::default()).unwrap();
        let model = CrossFusionModel::new(&ModelConfig {
            hidden: 32,
            head_widths: vec![16],
            ..ModelConfig::new(DIM)
        })
        .unwrap();
        let examples = QueryEngine::new(&split.pool, Some(&index), &model, &embedder, EngineConfig::default())
            .training_examples(&split.benchmark, 8, 7)
            .unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 1,
            negatives_per_query: 8,
            seed: 3,
            optimize_lambda: false,
        };
        let (model, _) = train(model, &examples, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap().keep();
        let path = dir.join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        path
    })
    .clone()
}
