use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{TableError, TableRecord};

/// The three discovery cases: condition only, condition plus a query table
/// to union with, condition plus a query table to join on a key column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    NlOnly,
    NlcUnion,
    NlcJoin,
}

impl QueryMode {
    pub const ALL: [QueryMode; 3] = [QueryMode::NlOnly, QueryMode::NlcUnion, QueryMode::NlcJoin];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryMode::NlOnly => "nl_only",
            QueryMode::NlcUnion => "nlc_union",
            QueryMode::NlcJoin => "nlc_join",
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nl_only" => Ok(QueryMode::NlOnly),
            "nlc_union" => Ok(QueryMode::NlcUnion),
            "nlc_join" => Ok(QueryMode::NlcJoin),
            other => Err(format!("unknown mode {other:?} (expected nl_only, nlc_union or nlc_join)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub mode: QueryMode,
    pub query_table: Option<TableRecord>,
    pub condition: Option<String>,
    pub key_column: Option<String>,
    pub k: usize,
}

impl QuerySpec {
    pub fn nl_only(condition: impl Into<String>, k: usize) -> Self {
        QuerySpec {
            mode: QueryMode::NlOnly,
            query_table: None,
            condition: Some(condition.into()),
            key_column: None,
            k,
        }
    }

    pub fn union(table: TableRecord, condition: Option<String>, k: usize) -> Self {
        QuerySpec {
            mode: QueryMode::NlcUnion,
            query_table: Some(table),
            condition,
            key_column: None,
            k,
        }
    }

    pub fn join(table: TableRecord, key_column: impl Into<String>, condition: Option<String>, k: usize) -> Self {
        QuerySpec {
            mode: QueryMode::NlcJoin,
            query_table: Some(table),
            condition,
            key_column: Some(key_column.into()),
            k,
        }
    }

    /// The condition text if present and not blank.
    pub fn condition_text(&self) -> Option<&str> {
        self.condition.as_deref().map(str::trim).filter(|c| !c.is_empty())
    }

    /// The query table when the mode uses one. `nl_only` ignores any table
    /// that was attached.
    pub fn effective_table(&self) -> Option<&TableRecord> {
        match self.mode {
            QueryMode::NlOnly => None,
            _ => self.query_table.as_ref(),
        }
    }
}

pub fn validate_query(q: &QuerySpec) -> Result<(), TableError> {
    if q.k == 0 {
        return Err(TableError::InvalidK);
    }
    match q.mode {
        QueryMode::NlOnly => {
            if q.condition_text().is_none() {
                return Err(TableError::MissingCondition);
            }
        }
        QueryMode::NlcUnion => {
            if q.query_table.is_none() {
                return Err(TableError::MissingQueryTable(q.mode));
            }
        }
        QueryMode::NlcJoin => {
            let table = q.query_table.as_ref().ok_or(TableError::MissingQueryTable(q.mode))?;
            let key = q
                .key_column
                .as_deref()
                .filter(|k| !k.trim().is_empty())
                .ok_or(TableError::MissingKeyColumn)?;
            if table.column(key).is_none() {
                return Err(TableError::UnknownColumn(key.to_string()));
            }
        }
    }
    if let Some(t) = q.effective_table() {
        t.check()?;
    }
    Ok(())
}
