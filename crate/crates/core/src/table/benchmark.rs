//! Benchmark directories.
//!
//! ```text
//! bench/
//!   manifest.json     {"max_grade": 2}
//!   queries.jsonl     {"id", "mode", "condition", "query_table", "key_column", "k"} per line
//!   qrels.tsv         query_id <TAB> table_id <TAB> grade
//!   tables/           pool tables (CSV + sidecars)
//!   queries/          query tables referenced from queries.jsonl
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_table_csv, write_table, QueryMode, QuerySpec, TableError};

const QUERY_TABLE_DIR: &str = "queries";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub query_id: String,
    pub table_id: String,
    pub relevance: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkQuery {
    pub id: String,
    pub spec: QuerySpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub max_grade: u32,
    pub queries: Vec<BenchmarkQuery>,
    pub qrels: Vec<GoldLabel>,
}

impl Benchmark {
    pub fn qrels_for<'a>(&'a self, query_id: &'a str) -> impl Iterator<Item = &'a GoldLabel> + 'a {
        self.qrels.iter().filter(move |g| g.query_id == query_id)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    max_grade: u32,
}

#[derive(Serialize, Deserialize)]
struct QueryLine {
    id: String,
    mode: QueryMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    query_table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_column: Option<String>,
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    10
}

fn malformed(what: &str, reason: impl ToString) -> TableError {
    TableError::Malformed {
        what: what.to_string(),
        reason: reason.to_string(),
    }
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark, TableError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)
        .map_err(|e| malformed("manifest.json", e))?;

    let mut queries = Vec::new();
    let file = fs::File::open(dir.join("queries.jsonl"))?;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryLine =
            serde_json::from_str(&line).map_err(|e| malformed(&format!("queries.jsonl line {}", n + 1), e))?;
        let query_table = match &q.query_table {
            Some(rel) => {
                let path = dir.join(rel);
                let meta = path.with_extension("meta.json");
                Some(parse_table_csv(&path, Some(&meta))?)
            }
            None => None,
        };
        queries.push(BenchmarkQuery {
            id: q.id,
            spec: QuerySpec {
                mode: q.mode,
                query_table,
                condition: q.condition,
                key_column: q.key_column,
                k: q.k,
            },
        });
    }

    let ids: HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    let mut qrels = Vec::new();
    let file = fs::File::open(dir.join("qrels.tsv"))?;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [query_id, table_id, grade] = fields[..] else {
            return Err(malformed(&format!("qrels.tsv line {}", n + 1), "expected 3 tab-separated fields"));
        };
        let grade: u32 = grade
            .trim()
            .parse()
            .map_err(|e| malformed(&format!("qrels.tsv line {}", n + 1), e))?;
        if !ids.contains(query_id) {
            return Err(TableError::DanglingQrel(query_id.to_string()));
        }
        if grade > manifest.max_grade {
            return Err(TableError::GradeOutOfRange {
                query_id: query_id.to_string(),
                grade,
                max: manifest.max_grade,
            });
        }
        qrels.push(GoldLabel {
            query_id: query_id.to_string(),
            table_id: table_id.to_string(),
            relevance: grade,
        });
    }

    Ok(Benchmark {
        max_grade: manifest.max_grade,
        queries,
        qrels,
    })
}

/// Writes manifest, queries and qrels; query tables go under `queries/`.
/// The pool itself is written separately (see [`super::write_pool`]).
pub fn write_benchmark(bench: &Benchmark, dir: &Path) -> Result<(), TableError> {
    fs::create_dir_all(dir.join(QUERY_TABLE_DIR))?;
    let manifest = serde_json::to_string(&Manifest {
        max_grade: bench.max_grade,
    })
    .expect("manifest serializes");
    fs::write(dir.join("manifest.json"), manifest)?;

    let mut out = fs::File::create(dir.join("queries.jsonl"))?;
    for q in &bench.queries {
        let query_table = match &q.spec.query_table {
            Some(t) => {
                let mut t = t.clone();
                t.id = q.id.clone();
                write_table(&t, &dir.join(QUERY_TABLE_DIR))?;
                Some(format!("{QUERY_TABLE_DIR}/{}.csv", q.id))
            }
            None => None,
        };
        let line = QueryLine {
            id: q.id.clone(),
            mode: q.spec.mode,
            condition: q.spec.condition.clone(),
            query_table,
            key_column: q.spec.key_column.clone(),
            k: q.spec.k,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("query serializes"))?;
    }

    let mut out = fs::File::create(dir.join("qrels.tsv"))?;
    for g in &bench.qrels {
        writeln!(out, "{}\t{}\t{}", g.query_id, g.table_id, g.relevance)?;
    }
    Ok(())
}
