//! In-memory registry of pools, their indexes and models, and background jobs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nlctd_core::embedding::{Embedder, EmbeddingProviderConfig};
use nlctd_core::engine::SearchIndex;
use nlctd_core::index::HnswParams;
use nlctd_core::nlc::{CrossFusionModel, ModelConfig};
use nlctd_core::table::TablePool;
use serde::Serialize;
use serde_json::Value;

use crate::assistant::LlmConfig;
use crate::error::ApiError;

/// Subdirectory of a pool directory where `nlctd index` saves its artifact.
pub const INDEX_SUBDIR: &str = "index";

#[derive(Debug, Clone)]
pub struct Settings {
    pub embedding: EmbeddingProviderConfig,
    pub hnsw: HnswParams,
    /// Checkpoint every pool starts from; a fresh model otherwise.
    pub model_path: Option<PathBuf>,
    pub llm: Option<LlmConfig>,
}

impl Settings {
    pub fn new(embedding: EmbeddingProviderConfig) -> Self {
        Settings {
            embedding,
            hnsw: HnswParams::default(),
            model_path: None,
            llm: None,
        }
    }
}

pub struct PoolEntry {
    pub pool: Arc<TablePool>,
    pub source: Option<PathBuf>,
    index: RwLock<Option<Arc<SearchIndex>>>,
    model: RwLock<Arc<CrossFusionModel>>,
    /// Set while an index build or training job owns the pool.
    busy: AtomicBool,
}

/// Releases the pool's busy flag on drop.
pub struct BusyGuard(Arc<PoolEntry>);

impl Drop for BusyGuard {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

impl PoolEntry {
    pub fn index(&self) -> Option<Arc<SearchIndex>> {
        self.index.read().unwrap().clone()
    }

    pub fn model(&self) -> Arc<CrossFusionModel> {
        self.model.read().unwrap().clone()
    }

    pub fn set_index(&self, index: SearchIndex) {
        *self.index.write().unwrap() = Some(Arc::new(index));
    }

    pub fn set_model(&self, model: CrossFusionModel) {
        *self.model.write().unwrap() = Arc::new(model);
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::Acquire)
    }

    /// At most one build or training job per pool.
    pub fn acquire(self: &Arc<Self>) -> Result<BusyGuard, ApiError> {
        if self.busy.swap(true, Ordering::AcqRel) {
            return Err(ApiError::conflict("pool_busy", "an index build or training job is already running on this pool"));
        }
        Ok(BusyGuard(self.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: String,
    pub kind: String,
    pub pool_id: String,
    pub status: JobStatus,
    pub submitted_at: u64,
    pub elapsed_ms: Option<f64>,
    pub result: Option<Value>,
    pub error: Option<String>,
}

pub struct AppState {
    pub settings: Settings,
    pub embedder: Embedder,
    pools: RwLock<BTreeMap<String, Arc<PoolEntry>>>,
    jobs: Mutex<BTreeMap<String, Job>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(settings: Settings) -> Result<Self, ApiError> {
        let embedder = settings.embedding.build().map_err(|e| ApiError::bad_request("invalid_config", e))?;
        Ok(AppState {
            settings,
            embedder,
            pools: RwLock::new(BTreeMap::new()),
            jobs: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub fn initial_model(&self) -> Result<CrossFusionModel, ApiError> {
        let dim = self.embedder.dim();
        let model = match &self.settings.model_path {
            Some(p) => nlctd_core::trainer::load_checkpoint(p).map_err(|e| ApiError::internal(e))?,
            None => CrossFusionModel::new(&ModelConfig::new(dim)).map_err(|e| ApiError::internal(e))?,
        };
        if model.dim != dim {
            return Err(ApiError::bad_request(
                "dim_mismatch",
                format!("model dimension {} differs from the embedding dimension {dim}", model.dim),
            ));
        }
        Ok(model)
    }

    /// Registers a pool. The id defaults to the pool's own id, suffixed when
    /// taken. A saved index under `<source>/index` is picked up when it
    /// matches the pool and the embedding dimension.
    pub fn add_pool(&self, mut pool: TablePool, source: Option<PathBuf>, id: Option<String>) -> Result<Arc<PoolEntry>, ApiError> {
        let model = self.initial_model()?;
        let index = source.as_deref().and_then(|dir| self.saved_index(dir, &pool));
        let mut pools = self.pools.write().unwrap();
        let id = match id {
            Some(id) if pools.contains_key(&id) => {
                return Err(ApiError::conflict("pool_exists", format!("pool {id:?} already exists")));
            }
            Some(id) => id,
            None if !pools.contains_key(&pool.pool_id) && !pool.pool_id.is_empty() => pool.pool_id.clone(),
            None => self.fresh_id("pool"),
        };
        pool.pool_id = id.clone();
        let entry = Arc::new(PoolEntry {
            pool: Arc::new(pool),
            source,
            index: RwLock::new(index.map(Arc::new)),
            model: RwLock::new(Arc::new(model)),
            busy: AtomicBool::new(false),
        });
        pools.insert(id, entry.clone());
        Ok(entry)
    }

    fn saved_index(&self, dir: &Path, pool: &TablePool) -> Option<SearchIndex> {
        let path = dir.join(INDEX_SUBDIR);
        if !path.exists() {
            return None;
        }
        match SearchIndex::load(&path) {
            Ok(ix) if ix.dim == self.embedder.dim() && ix.len() == pool.len() && pool.tables.keys().all(|k| ix.get(k).is_some()) => {
                Some(ix)
            }
            Ok(_) => {
                log::warn!("ignoring {}: it does not match the pool or the embedding dimension", path.display());
                None
            }
            Err(e) => {
                log::warn!("ignoring {}: {e}", path.display());
                None
            }
        }
    }

    pub fn pool(&self, id: &str) -> Result<Arc<PoolEntry>, ApiError> {
        self.pools
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_pool", format!("no pool {id:?}")))
    }

    pub fn pools(&self) -> Vec<Arc<PoolEntry>> {
        self.pools.read().unwrap().values().cloned().collect()
    }

    pub fn job(&self, id: &str) -> Result<Job, ApiError> {
        self.jobs
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_job", format!("no job {id:?}")))
    }

    /// Runs `work` on its own thread and records its outcome under a new id.
    pub fn spawn_job<F>(self: &Arc<Self>, kind: &str, pool_id: &str, work: F) -> String
    where
        F: FnOnce() -> Result<Value, String> + Send + 'static,
    {
        let id = self.fresh_id("job");
        let submitted_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        self.jobs.lock().unwrap().insert(
            id.clone(),
            Job {
                id: id.clone(),
                kind: kind.to_string(),
                pool_id: pool_id.to_string(),
                status: JobStatus::Running,
                submitted_at,
                elapsed_ms: None,
                result: None,
                error: None,
            },
        );
        let state = self.clone();
        let job_id = id.clone();
        std::thread::spawn(move || {
            let start = Instant::now();
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(work))
                .unwrap_or_else(|_| Err("job panicked".to_string()));
            let mut jobs = state.jobs.lock().unwrap();
            let job = jobs.get_mut(&job_id).expect("job registered before spawn");
            job.elapsed_ms = Some(start.elapsed().as_secs_f64() * 1e3);
            match outcome {
                Ok(v) => {
                    job.status = JobStatus::Succeeded;
                    job.result = Some(v);
                }
                Err(e) => {
                    log::warn!("{} job {job_id} failed: {e}", job.kind);
                    job.status = JobStatus::Failed;
                    job.error = Some(e);
                }
            }
        });
        id
    }
}
