//! Union and join previews for the processing panel. Bounded to
//! [`PREVIEW_ROWS`] rows; `row_count` always reports the full result size.

use std::collections::HashMap;

use nlctd_core::embedding::Embedder;
use nlctd_core::scorer;
use nlctd_core::table::TableRecord;
use serde::{Deserialize, Serialize};

pub const PREVIEW_ROWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub row_count: usize,
    pub truncated: bool,
    /// Union: right column aligned under each left column, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alignment: Vec<Option<String>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ProcessError {
    #[error("unknown column {column:?} in table {table:?}")]
    UnknownColumn { table: String, column: String },
    #[error("join preview needs a key column on both sides")]
    MissingKey,
    #[error(transparent)]
    Embed(#[from] nlctd_core::embedding::EmbedError),
    #[error(transparent)]
    Score(#[from] scorer::ScoreError),
}

fn finish(columns: Vec<String>, rows: impl Iterator<Item = Vec<String>>, alignment: Vec<Option<String>>) -> Preview {
    let mut kept = Vec::new();
    let mut row_count = 0;
    for r in rows {
        if kept.len() < PREVIEW_ROWS {
            kept.push(r);
        }
        row_count += 1;
    }
    Preview {
        columns,
        truncated: row_count > kept.len(),
        rows: kept,
        row_count,
        alignment,
    }
}

/// Appends the right table's rows under the left schema. Columns are
/// aligned by the same bipartite matching the union scorer uses; left
/// columns without a partner are left empty. With no matched pair the
/// right table contributes nothing.
pub fn union_preview(left: &TableRecord, right: &TableRecord, embedder: &Embedder) -> Result<Preview, ProcessError> {
    let lc = embedder.embed_columns(left)?;
    let rc = embedder.embed_columns(right)?;
    let matching = scorer::union_score(&lc, &rc)?;
    let mut source: Vec<Option<usize>> = vec![None; left.columns.len()];
    for p in matching.pairs.iter().filter(|p| p.weight > 0.0) {
        source[p.query] = Some(p.candidate);
    }
    let alignment = source
        .iter()
        .map(|s| s.map(|j| right.columns[j].name.clone()))
        .collect();
    let right_rows = if source.iter().any(Option::is_some) { right.row_count } else { 0 };
    let rows = (0..left.row_count)
        .map(|i| left.row(i).into_iter().map(str::to_string).collect())
        .chain((0..right_rows).map(|i| {
            source
                .iter()
                .map(|s| s.map_or_else(String::new, |j| right.columns[j].values[i].clone()))
                .collect()
        }));
    Ok(finish(left.header().into_iter().map(str::to_string).collect(), rows, alignment))
}

fn column_index(t: &TableRecord, name: &str) -> Result<usize, ProcessError> {
    t.column_index(name).ok_or_else(|| ProcessError::UnknownColumn {
        table: t.id.clone(),
        column: name.to_string(),
    })
}

/// Left equi-join on trimmed key values. Every left row appears once per
/// matching right row, or once with empty right cells when nothing matches.
/// Right columns other than the key are appended; names already used on the
/// left get the right table id as prefix.
pub fn join_preview(
    left: &TableRecord,
    right: &TableRecord,
    left_key: &str,
    right_key: &str,
) -> Result<Preview, ProcessError> {
    if left_key.trim().is_empty() || right_key.trim().is_empty() {
        return Err(ProcessError::MissingKey);
    }
    let lk = column_index(left, left_key)?;
    let rk = column_index(right, right_key)?;
    let right_cols: Vec<usize> = (0..right.columns.len()).filter(|&j| j != rk).collect();
    let mut by_key: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, v) in right.columns[rk].values.iter().enumerate() {
        by_key.entry(v.trim()).or_default().push(i);
    }
    let mut columns: Vec<String> = left.header().into_iter().map(str::to_string).collect();
    for &j in &right_cols {
        let name = &right.columns[j].name;
        columns.push(if columns.contains(name) {
            format!("{}.{name}", right.id)
        } else {
            name.clone()
        });
    }
    let empty: Vec<usize> = Vec::new();
    let rows = (0..left.row_count).flat_map(|i| {
        let base: Vec<String> = left.row(i).into_iter().map(str::to_string).collect();
        let matches = by_key.get(left.columns[lk].values[i].trim()).unwrap_or(&empty);
        let fill: Vec<Option<usize>> = if matches.is_empty() {
            vec![None]
        } else {
            matches.iter().copied().map(Some).collect()
        };
        let right_cols = &right_cols;
        fill.into_iter().map(move |m| {
            let mut r = base.clone();
            r.extend(
                right_cols
                    .iter()
                    .map(|&j| m.map_or_else(String::new, |m| right.columns[j].values[m].clone())),
            );
            r
        })
    });
    Ok(finish(columns, rows, Vec::new()))
}
