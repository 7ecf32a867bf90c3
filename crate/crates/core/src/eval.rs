//! Benchmark runs: NDCG@5/@10 per query plus execute latency.
//!
//! Gains are `2^rel - 1` with a `log2(i + 1)` discount. Queries without any
//! positive qrel score 0 and stay in the mean; so do queries whose execution
//! failed (they are also reported by name and excluded from latency).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::QueryEngine;
use crate::table::{Benchmark, BenchmarkQuery, GoldLabel, QuerySpec};

/// Cutoffs reported by every run.
pub const CUTOFFS: [usize; 2] = [5, 10];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("all {0} queries failed")]
    AllQueriesFailed(usize),
    #[error("benchmark has no queries")]
    EmptyBenchmark,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

fn dcg(rels: impl Iterator<Item = u32>, k: usize) -> f64 {
    rels.take(k)
        .enumerate()
        .map(|(i, r)| gain(r) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@k of `ranked` against one query's graded qrels (`table id -> grade`).
pub fn ndcg_at_k(ranked: &[String], qrels: &HashMap<String, u32>, k: usize) -> f64 {
    let k = k.max(1);
    let mut ideal: Vec<u32> = qrels.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return 0.0;
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(ideal.into_iter(), k);
    let got = dcg(ranked.iter().map(|id| qrels.get(id).copied().unwrap_or(0)), k);
    got / idcg
}

pub fn qrel_map<'a>(labels: impl IntoIterator<Item = &'a GoldLabel>) -> HashMap<String, u32> {
    labels
        .into_iter().map(|g| (g.table_id.clone(), g.relevance)).collect()
}

/// Anything that turns a query into a ranked list of table ids.
pub trait Ranker: Sync {
    fn rank(&self, spec: &QuerySpec) -> Result<Vec<String>, String>;
}

impl Ranker for QueryEngine<'_> {
    fn rank(&self, spec: &QuerySpec) -> Result<Vec<String>, String> {
        self.execute(spec)
            .map(|r| r.into_iter().map(|s| s.table_id).collect())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
    pub latency_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats {
                p50_ms: 0.0,
                p95_ms: 0.0,
                mean_ms: 0.0,
            };
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pct = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        LatencyStats {
            p50_ms: pct(0.50),
            p95_ms: pct(0.95),
            mean_ms: s.iter().sum::<f64>() / s.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub per_query: BTreeMap<String, QueryOutcome>,
    pub mean_ndcg_at_5: f64,
    pub mean_ndcg_at_10: f64,
    pub latency: LatencyStats,
    pub failed: Vec<String>,
}

fn run_query(ranker: &dyn Ranker, q: &BenchmarkQuery, bench: &Benchmark) -> QueryOutcome {
    let mut spec = q.spec.clone();
    spec.k = spec.k.max(CUTOFFS[1]);
    let start = Instant::now();
    let result = ranker.rank(&spec);
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(ranked) => {
            let qrels = qrel_map(bench.qrels_for(&q.id));
            QueryOutcome {
                ndcg_at_5: ndcg_at_k(&ranked, &qrels, 5),
                ndcg_at_10: ndcg_at_k(&ranked, &qrels, 10),
                latency_ms: Some(elapsed),
                error: None,
            }
        }
        Err(e) => QueryOutcome {
            ndcg_at_5: 0.0,
            ndcg_at_10: 0.0,
            latency_ms: None,
            error: Some(e),
        },
    }
}

/// Sequential run, so latencies are uncontended.
pub fn evaluate_run(ranker: &dyn Ranker, bench: &Benchmark) -> Result<RunResult, EvalError> {
    let outcomes = bench.queries.iter().map(|q| (q.id.clone(), run_query(ranker, q, bench))).collect();
    aggregate(outcomes)
}

/// Queries in parallel. NDCG matches [`evaluate_run`]; latencies are contended.
pub fn evaluate_run_parallel(ranker: &dyn Ranker, bench: &Benchmark) -> Result<RunResult, EvalError> {
    let outcomes = bench
        .queries
        .par_iter()
        .map(|q| (q.id.clone(), run_query(ranker, q, bench)))
        .collect();
    aggregate(outcomes)
}

fn aggregate(outcomes: Vec<(String, QueryOutcome)>) -> Result<RunResult, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|(_, o)| o.error.is_some())
        .map(|(id, _)| id.clone())
        .collect();
    if failed.len() == outcomes.len() {
        return Err(EvalError::AllQueriesFailed(outcomes.len()));
    }
    let n = outcomes.len() as f64;
    let mean = |f: fn(&QueryOutcome) -> f64| outcomes.iter().map(|(_, o)| f(o)).sum::<f64>() / n;
    let latencies: Vec<f64> = outcomes.iter().filter_map(|(_, o)| o.latency_ms).collect();
    Ok(RunResult {
        mean_ndcg_at_5: mean(|o| o.ndcg_at_5),
        mean_ndcg_at_10: mean(|o| o.ndcg_at_10),
        latency: LatencyStats::from_samples(&latencies),
        failed,
        per_query: outcomes.into_iter().collect(),
    })
}

impl RunResult {
    /// Per-query rows followed by the aggregate block.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>10}", "query", "ndcg@5", "ndcg@10", "ms");
        for (id, o) in &self.per_query {
            let ms = o.latency_ms.map_or_else(|| "-".to_string(), |l| format!("{l:.2}"));
            let _ = write!(s, "{:<24} {:>8.4} {:>8.4} {:>10}", id, o.ndcg_at_5, o.ndcg_at_10, ms);
            if let Some(e) = &o.error {
                let _ = write!(s, "  error: {e}");
            }
            s.push('\n');
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "queries       {}", self.per_query.len());
        let _ = writeln!(s, "failed        {}", self.failed.len());
        let _ = writeln!(s, "mean ndcg@5   {:.4}", self.mean_ndcg_at_5);
        let _ = writeln!(s, "mean ndcg@10  {:.4}", self.mean_ndcg_at_10);
        let _ = writeln!(
            s,
            "latency ms    p50 {:.2}  p95 {:.2}  mean {:.2}",
            self.latency.p50_ms, self.latency.p95_ms, self.latency.mean_ms
        );
        s
    }

    /// `report.txt` and `results.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.report())?;
        std::fs::write(dir.join("results.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn qrels(v: &[(&str, u32)]) -> HashMap<String, u32> {
        v.iter().map(|(k, g)| (k.to_string(), *g)).collect()
    }

    #[test]
    fn worked_example() {
        let q = qrels(&[("a", 1), ("b", 0), ("c", 1)]);
        let v = ndcg_at_k(&ids(&["a", "b", "c"]), &q, 3);
        let expect = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_degenerate() {
        let q = qrels(&[("a", 2), ("b", 1), ("c", 0)]);
        assert_eq!(ndcg_at_k(&ids(&["a", "b", "c"]), &q, 10), 1.0);
        assert_eq!(ndcg_at_k(&ids(&["a"]), &qrels(&[("a", 0)]), 5), 0.0);
        assert_eq!(ndcg_at_k(&ids(&[]), &q, 5), 0.0);
    }

    #[test]
    fn latency_percentiles() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let l = LatencyStats::from_samples(&s);
        assert_eq!((l.p50_ms, l.p95_ms, l.mean_ms), (50.0, 95.0, 50.5));
    }

    fn arb_case() -> impl Strategy<Value = (Vec<String>, HashMap<String, u32>)> {
        (2usize..12).prop_flat_map(|n| {
            (Just(n), proptest::collection::vec(0u32..4, n), Just(()).prop_perturb(move |_, mut rng| {
                let mut order: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                order
            }))
                .prop_map(|(n, grades, order)| {
                    let ranked = order.iter().map(|i| format!("t{i}")).collect();
                    let q = (0..n).map(|i| (format!("t{i}"), grades[i])).collect();
                    (ranked, q)
                })
        })
    }

    proptest! {
        #[test]
        fn bounded((ranked, q) in arb_case(), k in 1usize..12) {
            let v = ndcg_at_k(&ranked, &q, k);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }

        #[test]
        fn tail_order_irrelevant((mut ranked, q) in arb_case(), k in 1usize..6) {
            let before = ndcg_at_k(&ranked, &q, k);
            if ranked.len() > k {
                ranked[k..].reverse();
            }
            prop_assert_eq!(before, ndcg_at_k(&ranked, &q, k));
        }

        #[test]
        fn fixing_an_inversion_helps((mut ranked, q) in arb_case(), i in 0usize..12, j in 0usize..12) {
            let n = ranked.len();
            let (i, j) = (i % n, j % n);
            let (i, j) = (i.min(j), i.max(j));
            prop_assume!(i != j && q[&ranked[i]] < q[&ranked[j]]);
            let before = ndcg_at_k(&ranked, &q, n);
            ranked.swap(i, j);
            prop_assert!(ndcg_at_k(&ranked, &q, n) > before);
        }
    }
}
