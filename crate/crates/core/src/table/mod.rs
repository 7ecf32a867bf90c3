//! In-memory tables, pools, queries and benchmark labels, plus their on-disk
//! formats.
//!
//! Cells are kept as text. The inferred column kind is advisory and never
//! feeds the embedding path.

mod benchmark;
mod io;
mod query;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use benchmark::{load_benchmark, write_benchmark, Benchmark, BenchmarkQuery, GoldLabel};
pub use io::{load_pool, parse_table_csv, parse_table_str, table_to_csv, write_pool, write_table};
pub use query::{validate_query, QueryMode, QuerySpec};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedTable {
        path: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{0}: table has no header row")]
    EmptyTable(String),
    #[error("{0}: no table files found")]
    EmptyPool(PathBuf),
    #[error("duplicate table id {0:?}")]
    DuplicateId(String),
    #[error("qrel references unknown query {0:?}")]
    DanglingQrel(String),
    #[error("qrel grade {grade} for query {query_id:?} exceeds manifest maximum {max}")]
    GradeOutOfRange { query_id: String, grade: u32, max: u32 },
    #[error("join query requires a key column")]
    MissingKeyColumn,
    #[error("column {0:?} not found in query table")]
    UnknownColumn(String),
    #[error("query requires a non-empty condition")]
    MissingCondition,
    #[error("{0} query requires a query table")]
    MissingQueryTable(QueryMode),
    #[error("k must be positive")]
    InvalidK,
    #[error("malformed {what}: {reason}")]
    Malformed { what: String, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Text,
    Date,
    Mixed,
}

impl ColumnKind {
    /// Best-effort kind of a column from its non-empty cells.
    pub fn infer<S: AsRef<str>>(values: &[S]) -> Self {
        let mut numeric = 0usize;
        let mut date = 0usize;
        let mut text = 0usize;
        for v in values.iter().map(|v| v.as_ref().trim()).filter(|v| !v.is_empty()) {
            if v.parse::<f64>().is_ok() {
                numeric += 1;
            } else if looks_like_date(v) {
                date += 1;
            } else {
                text += 1;
            }
        }
        match (numeric, date, text) {
            (0, 0, _) => ColumnKind::Text,
            (_, 0, 0) => ColumnKind::Numeric,
            (0, _, 0) => ColumnKind::Date,
            _ => ColumnKind::Mixed,
        }
    }
}

fn looks_like_date(s: &str) -> bool {
    // YYYY-MM-DD or YYYY/MM/DD
    let b = s.as_bytes();
    b.len() == 10
        && (b[4] == b'-' || b[4] == b'/')
        && b[7] == b[4]
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnData {
    pub name: String,
    pub values: Vec<String>,
    pub inferred_kind: ColumnKind,
}

impl ColumnData {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Self {
        let inferred_kind = ColumnKind::infer(&values);
        ColumnData {
            name: name.into(),
            values,
            inferred_kind,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMetadata {
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub description: String,
}

impl TableMetadata {
    pub fn new(caption: impl Into<String>, description: impl Into<String>) -> Self {
        TableMetadata {
            caption: caption.into(),
            description: description.into(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.caption.trim().is_empty() && self.description.trim().is_empty()
    }

    /// Caption and description joined by a single space.
    pub fn text(&self) -> String {
        format!("{} {}", self.caption, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRecord {
    pub id: String,
    pub columns: Vec<ColumnData>,
    pub row_count: usize,
    pub metadata: TableMetadata,
}

impl TableRecord {
    /// Builds a table from a header and row-major cells. Duplicate header
    /// names get an ordinal suffix (`name_2`, `name_3`, ...).
    pub fn from_rows(
        id: impl Into<String>,
        header: &[String],
        rows: &[Vec<String>],
        metadata: TableMetadata,
    ) -> Result<Self, TableError> {
        let id = id.into();
        if header.is_empty() {
            return Err(TableError::EmptyTable(id));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(TableError::RaggedTable {
                    path: id,
                    row: i + 2,
                    expected: header.len(),
                    found: row.len(),
                });
            }
        }
        let names = disambiguate(header);
        let columns = names
            .into_iter()
            .enumerate()
            .map(|(j, name)| ColumnData::new(name, rows.iter().map(|r| r[j].clone()).collect()))
            .collect();
        Ok(TableRecord {
            id,
            columns,
            row_count: rows.len(),
            metadata,
        })
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn header(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Row `i` as a list of cells.
    pub fn row(&self, i: usize) -> Vec<&str> {
        self.columns.iter().map(|c| c.values[i].as_str()).collect()
    }

    /// Checks the structural invariants: at least one column, non-empty
    /// names, every column `row_count` long.
    pub fn check(&self) -> Result<(), TableError> {
        if self.columns.is_empty() {
            return Err(TableError::EmptyTable(self.id.clone()));
        }
        for c in &self.columns {
            if c.name.trim().is_empty() {
                return Err(TableError::Malformed {
                    what: format!("table {}", self.id),
                    reason: "blank column name".into(),
                });
            }
            if c.values.len() != self.row_count {
                return Err(TableError::RaggedTable {
                    path: self.id.clone(),
                    row: c.values.len(),
                    expected: self.row_count,
                    found: c.values.len(),
                });
            }
        }
        Ok(())
    }
}

fn disambiguate(header: &[String]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = Vec::with_capacity(header.len());
    for (j, raw) in header.iter().enumerate() {
        let mut name = raw.trim().to_string();
        if name.is_empty() {
            name = format!("column_{}", j + 1);
        }
        let count = seen.entry(name.clone()).or_insert(0);
        *count += 1;
        if *count > 1 {
            let mut ordinal = *count;
            let mut candidate = format!("{name}_{ordinal}");
            while header.iter().any(|h| h.trim() == candidate) {
                ordinal += 1;
                candidate = format!("{name}_{ordinal}");
            }
            log::warn!("duplicate column name {name:?} renamed to {candidate:?}");
            out.push(candidate);
        } else {
            out.push(name);
        }
    }
    out
}

/// A repository of tables keyed by id. Treated as frozen once an index has
/// been built over it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TablePool {
    pub pool_id: String,
    pub tables: BTreeMap<String, TableRecord>,
}

impl TablePool {
    pub fn new(pool_id: impl Into<String>) -> Self {
        TablePool {
            pool_id: pool_id.into(),
            tables: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, table: TableRecord) -> Result<(), TableError> {
        if self.tables.contains_key(&table.id) {
            return Err(TableError::DuplicateId(table.id));
        }
        self.tables.insert(table.id.clone(), table);
        Ok(())
    }

    pub fn from_tables(
        pool_id: impl Into<String>,
        tables: impl IntoIterator<Item = TableRecord>,
    ) -> Result<Self, TableError> {
        let mut pool = TablePool::new(pool_id);
        for t in tables {
            pool.insert(t)?;
        }
        Ok(pool)
    }

    pub fn get(&self, id: &str) -> Option<&TableRecord> {
        self.tables.get(id)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TableRecord> {
        self.tables.values()
    }
}
