//! `nlctd` command line. Verbs mirror the HTTP operations over pool
//! directories on disk; `serve` starts the HTTP API.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlctd_core::embedding::{EmbedError, Embedder, EmbeddingProviderConfig, ProviderKind, DEFAULT_DIM};
use nlctd_core::engine::{EngineConfig, EngineError, QueryEngine, SearchIndex, DEFAULT_CANDIDATES};
use nlctd_core::eval::{evaluate_run, evaluate_run_parallel, EvalError};
use nlctd_core::index::HnswParams;
use nlctd_core::nlc::{CrossFusionModel, ModelConfig, ModelError};
use nlctd_core::synth::{planted_benchmark, random_pool, PlantedConfig};
use nlctd_core::table::{
    load_benchmark, load_pool, parse_table_csv, validate_query, write_benchmark, write_pool, QueryMode, QuerySpec,
    TableError, TablePool,
};
use nlctd_core::trainer::{self, TrainConfig, TrainError};

use crate::api::{router, search_results};
use crate::assistant::LlmConfig;
use crate::state::{AppState, Settings, INDEX_SUBDIR};

#[derive(Debug, Parser)]
#[command(name = "nlctd", version, about = "Natural-language-conditional table discovery")]
pub struct Cli {
    #[command(flatten)]
    pub embedding: EmbeddingArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Provider {
    Hashing,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct EmbeddingArgs {
    #[arg(long, global = true, value_enum, default_value = "hashing", env = "NLCTD_PROVIDER")]
    pub provider: Provider,
    #[arg(long, global = true, default_value_t = DEFAULT_DIM, env = "NLCTD_DIM")]
    pub dim: usize,
    /// Hashing provider seed.
    #[arg(long, global = true, default_value_t = 0, env = "NLCTD_EMBED_SEED")]
    pub embed_seed: u64,
    /// Base URL of a remote encoder serving POST /embed.
    #[arg(long, global = true, env = "NLCTD_PROVIDER_ENDPOINT")]
    pub provider_endpoint: Option<String>,
}

impl EmbeddingArgs {
    pub fn config(&self) -> EmbeddingProviderConfig {
        EmbeddingProviderConfig {
            kind: match self.provider {
                Provider::Hashing => ProviderKind::Hashing,
                Provider::Remote => ProviderKind::Remote,
            },
            dim: self.dim,
            seed: self.embed_seed,
            endpoint: self.provider_endpoint.clone(),
            ..EmbeddingProviderConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a pool directory and print a summary.
    Ingest {
        #[arg(long)]
        pool: PathBuf,
    },
    /// Embed a pool and save its index (default `<pool>/index`).
    Index {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one query and print the ranked tables.
    Search(SearchArgs),
    /// Train the condition scorer on a benchmark and save a checkpoint.
    Train(TrainArgs),
    /// Run a benchmark and print the NDCG and latency report.
    Eval(EvalArgs),
    /// Serve the HTTP API until interrupted.
    Serve(ServeArgs),
    /// Write a synthetic pool and benchmark.
    Gen(GenArgs),
}

#[derive(Debug, Args)]
pub struct IndexedPool {
    #[arg(long)]
    pub pool: PathBuf,
    /// Saved index directory; defaults to `<pool>/index`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Model checkpoint; a freshly initialized model otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub target: IndexedPool,
    #[arg(long, default_value = "nl_only")]
    pub mode: QueryMode,
    /// Query table CSV (union and join modes).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
    /// Print the response as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub target: IndexedPool,
    #[arg(long)]
    pub benchmark: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub optimize_lambda: bool,
    /// Hidden width of a fresh model (ignored with --model).
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Comma-separated head widths of a fresh model.
    #[arg(long, value_delimiter = ',')]
    pub head: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub target: IndexedPool,
    #[arg(long)]
    pub benchmark: PathBuf,
    /// Writes report.txt and results.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_CANDIDATES)]
    pub candidates: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080, env = "NLCTD_PORT")]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1", env = "NLCTD_HOST")]
    pub host: String,
    /// Pool directories to load at startup (repeatable).
    #[arg(long)]
    pub pool: Vec<PathBuf>,
    #[arg(long, env = "NLCTD_MODEL")]
    pub model: Option<PathBuf>,
    /// Chat-completions URL for the assistant; rule-based routing otherwise.
    #[arg(long, env = "NLCTD_LLM_ENDPOINT")]
    pub llm_endpoint: Option<String>,
    #[arg(long, env = "NLCTD_LLM_KEY", hide_env_values = true)]
    pub llm_key: Option<String>,
    #[arg(long, env = "NLCTD_LLM_MODEL", default_value = "gpt-4o-mini")]
    pub llm_model: String,
    #[arg(long, env = "NLCTD_LLM_TIMEOUT_SECS", default_value_t = 10)]
    pub llm_timeout_secs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    /// Families of related tables with one planted answer per query.
    Planted,
    /// Unrelated random tables, no benchmark.
    Random,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: GenKind,
    /// Writes `<out>/pool` and, for planted, `<out>/benchmark`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    #[arg(long, default_value_t = 500)]
    pub tables: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Process exit codes, one per error class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    /// Bad arguments or invalid input data.
    Invalid = 2,
    /// Missing files or directories.
    NotFound = 3,
    /// The pool has no index.
    IndexNotReady = 4,
    /// The embedding provider could not be reached.
    ProviderUnavailable = 5,
    /// Training diverged or a checkpoint is unusable.
    Model = 6,
    Internal = 1,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

impl CliError {
    fn new(class: ExitClass, message: impl ToString) -> Self {
        CliError {
            class,
            message: message.to_string(),
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        let class = match &e {
            TableError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ExitClass::NotFound,
            TableError::Io(_) => ExitClass::Internal,
            TableError::EmptyPool(_) => ExitClass::NotFound,
            _ => ExitClass::Invalid,
        };
        CliError::new(class, e)
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        let class = match e {
            EmbedError::ProviderUnavailable(_) => ExitClass::ProviderUnavailable,
            EmbedError::InvalidConfig(_) => ExitClass::Invalid,
            _ => ExitClass::Internal,
        };
        CliError::new(class, e)
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::IndexNotReady => CliError::new(ExitClass::IndexNotReady, e),
            EngineError::InvalidConfig(_) | EngineError::UnknownTable(_) => CliError::new(ExitClass::Invalid, e),
            EngineError::CorruptCatalog(_) | EngineError::Model(_) => CliError::new(ExitClass::Model, e),
            EngineError::Query(t) => t.into(),
            EngineError::Embed(t) => t.into(),
            EngineError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => CliError::new(ExitClass::NotFound, io),
            _ => CliError::new(ExitClass::Internal, e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let class = match e {
            TrainError::InvalidConfig(_) | TrainError::EmptyBatch => ExitClass::Invalid,
            TrainError::Io(_) => ExitClass::Internal,
            _ => ExitClass::Model,
        };
        CliError::new(class, e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::new(ExitClass::Model, e)
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let class = match e {
            EvalError::EmptyBenchmark => ExitClass::Invalid,
            _ => ExitClass::Internal,
        };
        CliError::new(class, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        let class = if e.kind() == std::io::ErrorKind::NotFound {
            ExitClass::NotFound
        } else {
            ExitClass::Internal
        };
        CliError::new(class, e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.class as u8)
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let embedding = cli.embedding.config();
    match cli.command {
        Command::Ingest { pool } => ingest(&pool),
        Command::Index { pool, out } => index(&pool, out, &embedding),
        Command::Search(a) => search(a, &embedding),
        Command::Train(a) => train(a, &embedding),
        Command::Eval(a) => eval(a, &embedding),
        Command::Serve(a) => serve(a, embedding),
        Command::Gen(a) => gen(a),
    }
}

fn ingest(dir: &Path) -> CliResult {
    let pool = load_pool(dir)?;
    let columns: usize = pool.iter().map(|t| t.columns.len()).sum();
    let rows: usize = pool.iter().map(|t| t.row_count).sum();
    let captioned = pool.iter().filter(|t| !t.metadata.is_empty()).count();
    println!("pool       {}", pool.pool_id);
    println!("tables     {}", pool.len());
    println!("columns    {columns}");
    println!("rows       {rows}");
    println!("metadata   {captioned} of {} tables", pool.len());
    let indexed = dir.join(INDEX_SUBDIR).join(nlctd_core::engine::CATALOG_FILE).exists();
    println!("index      {}", if indexed { "present" } else { "missing" });
    Ok(())
}

fn index(dir: &Path, out: Option<PathBuf>, embedding: &EmbeddingProviderConfig) -> CliResult {
    let pool = load_pool(dir)?;
    let embedder = embedding.build()?;
    let start = Instant::now();
    let index = SearchIndex::build(&pool, &embedder, HnswParams::default())?;
    let out = out.unwrap_or_else(|| dir.join(INDEX_SUBDIR));
    index.save(&out)?;
    println!(
        "indexed {} tables (dim {}) in {:.1}s -> {}",
        index.len(),
        embedder.dim(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

struct Loaded {
    pool: TablePool,
    index: SearchIndex,
    model: CrossFusionModel,
    embedder: Embedder,
}

fn load_indexed(t: &IndexedPool, embedding: &EmbeddingProviderConfig, fresh: Option<ModelConfig>) -> CliResult<Loaded> {
    let pool = load_pool(&t.pool)?;
    let embedder = embedding.build()?;
    let index_dir = t.index.clone().unwrap_or_else(|| t.pool.join(INDEX_SUBDIR));
    if !index_dir.join(nlctd_core::engine::CATALOG_FILE).exists() {
        return Err(CliError::new(
            ExitClass::IndexNotReady,
            format!("no index at {}; run `nlctd index --pool {}`", index_dir.display(), t.pool.display()),
        ));
    }
    let index = SearchIndex::load(&index_dir)?;
    if index.dim != embedder.dim() {
        return Err(CliError::new(
            ExitClass::Invalid,
            format!("index was built at dim {} but --dim is {}", index.dim, embedder.dim()),
        ));
    }
    if index.len() != pool.len() || pool.tables.keys().any(|k| index.get(k).is_none()) {
        return Err(CliError::new(ExitClass::IndexNotReady, "index is stale: the pool has changed since it was built"));
    }
    let model = match &t.model {
        Some(p) => trainer::load_checkpoint(p).map_err(|e| match e {
            TrainError::Io(io) => CliError::from(io),
            other => other.into(),
        })?,
        None => CrossFusionModel::new(&fresh.unwrap_or_else(|| ModelConfig::new(embedder.dim())))?,
    };
    if model.dim != embedder.dim() {
        return Err(CliError::new(
            ExitClass::Model,
            format!("model dim {} does not match --dim {}", model.dim, embedder.dim()),
        ));
    }
    Ok(Loaded {
        pool,
        index,
        model,
        embedder,
    })
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

fn search(a: SearchArgs, embedding: &EmbeddingProviderConfig) -> CliResult {
    let query_table = a.table.as_deref().map(|p| parse_table_csv(p, None)).transpose()?;
    let spec = QuerySpec {
        mode: a.mode,
        query_table,
        condition: a.condition.clone(),
        key_column: a.key.clone(),
        k: a.k,
    };
    validate_query(&spec)?;
    let l = load_indexed(&a.target, embedding, None)?;
    let config = EngineConfig {
        n_candidates: a.candidates.max(a.k),
        lambda: a.lambda,
        k: a.k,
    };
    let lambda = a.lambda.unwrap_or(l.model.lambda);
    let engine = QueryEngine::new(&l.pool, Some(&l.index), &l.model, &l.embedder, config);
    engine.config.validate()?;
    let start = Instant::now();
    let scored = engine.execute(&spec)?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let results = search_results(&l.pool, scored);
    if a.json {
        let resp = crate::api::SearchResponse {
            pool_id: l.pool.pool_id.clone(),
            mode: spec.mode,
            condition: spec.condition.clone(),
            k: spec.k,
            lambda,
            n_candidates: engine.config.n_candidates,
            elapsed_ms,
            results,
        };
        println!("{}", serde_json::to_string_pretty(&resp).expect("response serializes"));
        return Ok(());
    }
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<24} {:>8} {:>8} {:>8}  caption", "rank", "table", "rho", "rho_t", "rho_c");
    for r in &results {
        let mut caption = r.caption.clone();
        if let Some(c) = &r.join_column {
            caption = format!("{caption} [key: {c}]");
        }
        let _ = writeln!(
            out,
            "{:>4}  {:<24} {:>8.4} {:>8} {:>8}  {}",
            r.rank,
            r.table_id,
            r.rho,
            fmt_score(r.rho_t),
            fmt_score(r.rho_c),
            caption
        );
    }
    let _ = writeln!(out, "{} results, mode {}, lambda {lambda}, {elapsed_ms:.1} ms", results.len(), spec.mode);
    print!("{out}");
    Ok(())
}

fn train(a: TrainArgs, embedding: &EmbeddingProviderConfig) -> CliResult {
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(defaults.learning_rate),
        epochs: a.epochs.unwrap_or(defaults.epochs),
        batch_size: a.batch.unwrap_or(defaults.batch_size),
        negatives_per_query: a.negatives.unwrap_or(defaults.negatives_per_query),
        seed: a.seed.unwrap_or(defaults.seed),
        optimize_lambda: a.optimize_lambda,
    };
    cfg.validate()?;
    let mut fresh = ModelConfig::new(embedding.dim);
    if let Some(h) = a.hidden {
        fresh.hidden = h;
    }
    if let Some(head) = a.head.clone() {
        fresh.head_widths = head;
    }
    let bench = load_benchmark(&a.benchmark)?;
    let l = load_indexed(&a.target, embedding, Some(fresh))?;
    let engine = QueryEngine::new(&l.pool, Some(&l.index), &l.model, &l.embedder, EngineConfig::default());
    let examples = engine.training_examples(&bench, cfg.negatives_per_query, cfg.seed)?;
    let start = Instant::now();
    let (model, curve) = trainer::train(l.model.clone(), &examples, &cfg)?;
    for (i, loss) in curve.epochs.iter().enumerate() {
        println!("epoch {:>4}  loss {loss:.6}", i + 1);
    }
    trainer::save_checkpoint(&model, &a.out)?;
    println!(
        "trained on {} queries in {:.1}s: loss {:.6} -> {:.6}, lambda {}; saved {}",
        examples.len(),
        start.elapsed().as_secs_f64(),
        curve.initial,
        curve.last(),
        model.lambda,
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs, embedding: &EmbeddingProviderConfig) -> CliResult {
    let bench = load_benchmark(&a.benchmark)?;
    let l = load_indexed(&a.target, embedding, None)?;
    let config = EngineConfig {
        n_candidates: a.candidates,
        lambda: a.lambda,
        ..EngineConfig::default()
    };
    config.validate()?;
    let engine = QueryEngine::new(&l.pool, Some(&l.index), &l.model, &l.embedder, config);
    let run = if a.parallel {
        evaluate_run_parallel(&engine, &bench)?
    } else {
        evaluate_run(&engine, &bench)?
    };
    print!("{}", run.report());
    if let Some(out) = &a.out {
        run.write(out)?;
    }
    Ok(())
}

fn serve(a: ServeArgs, embedding: EmbeddingProviderConfig) -> CliResult {
    let mut settings = Settings::new(embedding);
    settings.model_path = a.model.clone();
    settings.llm = a.llm_endpoint.clone().map(|endpoint| LlmConfig {
        endpoint,
        api_key: a.llm_key.clone(),
        model: a.llm_model.clone(),
        timeout: Duration::from_secs(a.llm_timeout_secs),
    });
    let state = AppState::new(settings).map_err(|e| CliError::new(ExitClass::Invalid, e))?;
    state.initial_model().map_err(|e| CliError::new(ExitClass::Model, e))?;
    for dir in &a.pool {
        let pool = load_pool(dir)?;
        let entry = state
            .add_pool(pool, Some(dir.clone()), None)
            .map_err(|e| CliError::new(ExitClass::Invalid, e))?;
        log::info!(
            "loaded pool {} ({} tables, {})",
            entry.pool.pool_id,
            entry.pool.len(),
            if entry.index().is_some() { "indexed" } else { "not indexed" }
        );
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::new(ExitClass::Invalid, format!("bad listen address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
                log::info!("shutting down");
            })
            .await
    })?;
    Ok(())
}

fn gen(a: GenArgs) -> CliResult {
    let pool_dir = a.out.join("pool");
    match a.kind {
        GenKind::Planted => {
            let p = planted_benchmark(&PlantedConfig {
                queries: a.queries,
                seed: a.seed,
                ..PlantedConfig::default()
            });
            write_pool(&p.pool, &pool_dir)?;
            let bench_dir = a.out.join("benchmark");
            write_benchmark(&p.benchmark, &bench_dir)?;
            std::fs::write(
                a.out.join("planted.json"),
                serde_json::to_string_pretty(&p.planted).expect("map serializes"),
            )?;
            println!(
                "wrote {} tables to {} and {} queries to {}",
                p.pool.len(),
                pool_dir.display(),
                p.benchmark.queries.len(),
                bench_dir.display()
            );
        }
        GenKind::Random => {
            let pool = random_pool(a.tables, a.seed);
            write_pool(&pool, &pool_dir)?;
            println!("wrote {} tables to {}", pool.len(), pool_dir.display());
        }
    }
    Ok(())
}
