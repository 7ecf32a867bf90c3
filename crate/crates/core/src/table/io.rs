use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::{TableError, TableMetadata, TablePool, TableRecord};

const META_SUFFIX: &str = ".meta.json";

/// Parses a CSV file (first row header) into a table whose id is the file
/// stem. Metadata comes from `metadata_path` when given and present.
pub fn parse_table_csv(path: &Path, metadata_path: Option<&Path>) -> Result<TableRecord, TableError> {
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let metadata = match metadata_path {
        Some(p) if p.exists() => read_metadata(p)?,
        _ => TableMetadata::default(),
    };
    let file = fs::File::open(path)?;
    parse_reader(&id, &path.display().to_string(), file, metadata)
}

/// Parses CSV text held in memory (inline uploads).
pub fn parse_table_str(id: &str, text: &str, metadata: TableMetadata) -> Result<TableRecord, TableError> {
    parse_reader(id, id, text.as_bytes(), metadata)
}

fn parse_reader<R: Read>(
    id: &str,
    origin: &str,
    reader: R,
    metadata: TableMetadata,
) -> Result<TableRecord, TableError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header: Vec<String> = match records.next() {
        Some(r) => r?.iter().map(str::to_string).collect(),
        None => return Err(TableError::EmptyTable(origin.to_string())),
    };
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(TableError::RaggedTable {
                path: origin.to_string(),
                row: i + 2,
                expected: header.len(),
                found: rec.len(),
            });
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    TableRecord::from_rows(id, &header, &rows, metadata)
}

fn read_metadata(path: &Path) -> Result<TableMetadata, TableError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| TableError::Malformed {
        what: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Serializes a table to CSV text, header first.
pub fn table_to_csv(table: &TableRecord) -> Result<String, TableError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table.header())?;
    for i in 0..table.row_count {
        w.write_record(table.row(i))?;
    }
    let bytes = w.into_inner().map_err(|e| TableError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

/// Writes `<id>.csv` and, when metadata is non-empty, `<id>.meta.json`.
pub fn write_table(table: &TableRecord, dir: &Path) -> Result<PathBuf, TableError> {
    let path = dir.join(format!("{}.csv", table.id));
    fs::write(&path, table_to_csv(table)?)?;
    if !table.metadata.is_empty() {
        let meta = serde_json::to_string_pretty(&table.metadata).expect("metadata serializes");
        fs::write(dir.join(format!("{}{META_SUFFIX}", table.id)), meta)?;
    }
    Ok(path)
}

pub fn write_pool(pool: &TablePool, dir: &Path) -> Result<(), TableError> {
    fs::create_dir_all(dir)?;
    for t in pool.iter() {
        write_table(t, dir)?;
    }
    Ok(())
}

/// Loads every `*.csv` in `dir` (non-recursive), pairing each with a
/// `<stem>.meta.json` sidecar when one exists. The pool id is the directory
/// name.
pub fn load_pool(dir: &Path) -> Result<TablePool, TableError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        })
        .collect();
    if files.is_empty() {
        return Err(TableError::EmptyPool(dir.to_path_buf()));
    }
    files.sort();
    let pool_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pool".into());
    let mut pool = TablePool::new(pool_id);
    for path in files {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let meta = dir.join(format!("{stem}{META_SUFFIX}"));
        pool.insert(parse_table_csv(&path, Some(&meta))?)?;
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "people.csv", "id,name\n1,ann\n2,bob\n3,cy\n");
        let t = parse_table_csv(&p, None).unwrap();
        assert_eq!(t.id, "people");
        assert_eq!(t.columns.len(), 2);
        assert_eq!(t.row_count, 3);
        assert_eq!(t.columns[1].values, vec!["ann", "bob", "cy"]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", "a,b\n1,2\n3\n");
        assert!(matches!(
            parse_table_csv(&p, None),
            Err(TableError::RaggedTable { row: 3, expected: 2, found: 1, .. })
        ));
    }

    #[test]
    fn header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "h.csv", "a,b\n");
        let t = parse_table_csv(&p, None).unwrap();
        assert_eq!(t.row_count, 0);
        assert!(t.columns.iter().all(|c| c.values.is_empty()));
    }

    #[test]
    fn empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "");
        assert!(matches!(parse_table_csv(&p, None), Err(TableError::EmptyTable(_))));
    }

    #[test]
    fn quoted_cells() {
        let t = parse_table_str("q", "name,note\n\"Smith, J\",\"said \"\"hi\"\"\"\n", TableMetadata::default()).unwrap();
        assert_eq!(t.columns[0].values[0], "Smith, J");
        assert_eq!(t.columns[1].values[0], "said \"hi\"");
    }

    #[test]
    fn sidecar_metadata() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "g.csv", "math\n90\n85\n");
        write(dir.path(), "g.meta.json", r#"{"caption":"grades","description":"term 1"}"#);
        let pool = load_pool(dir.path()).unwrap();
        let g = pool.get("g").unwrap();
        assert_eq!(g.metadata, TableMetadata::new("grades", "term 1"));
    }

    #[test]
    fn load_five_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_pool(dir.path()), Err(TableError::EmptyPool(_))));
        for i in 0..5 {
            write(dir.path(), &format!("t{i}.csv"), "a\n1\n");
        }
        assert_eq!(load_pool(dir.path()).unwrap().len(), 5);
    }

    #[test]
    fn case_collision_is_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x\n1\n");
        write(dir.path(), "a.CSV", "x\n1\n");
        assert!(matches!(load_pool(dir.path()), Err(TableError::DuplicateId(_))));
    }

    #[test]
    fn pool_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t1 = parse_table_str(
            "t1",
            "a,b\n\"x,y\",2\n,3\n",
            TableMetadata::new("cap", "desc"),
        )
        .unwrap();
        let t2 = parse_table_str("t2", "only\n", TableMetadata::default()).unwrap();
        let pool = TablePool::from_tables("p", [t1, t2]).unwrap();
        let out = dir.path().join("p");
        write_pool(&pool, &out).unwrap();
        assert_eq!(load_pool(&out).unwrap(), pool);
    }
}
