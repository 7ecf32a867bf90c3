//! The offline artifact: per-table embeddings plus the HNSW graph over
//! their pool vectors.
//!
//! Catalog file, little-endian:
//!
//! ```text
//! magic "NLCATLG\0" | version u32 | dim u32 | count u64
//! per table: id len u32 + utf-8, columns u32, columns x dim f64, dim f64 metadata
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;

use super::EngineError;
use crate::embedding::{Embedder, PoolVector, TableEmbedding};
use crate::index::{HnswIndex, HnswParams, IndexEntry};
use crate::linalg;
use crate::table::TablePool;

const MAGIC: &[u8; 8] = b"NLCATLG\0";
const VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.hnsw";
pub const CATALOG_FILE: &str = "catalog.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct SearchIndex {
    pub dim: usize,
    pub tables: BTreeMap<String, TableEmbedding>,
    pub hnsw: HnswIndex,
}

impl SearchIndex {
    /// Embeds every table (in parallel) and builds the graph in pool order.
    pub fn build(pool: &TablePool, embedder: &Embedder, params: HnswParams) -> Result<Self, EngineError> {
        let ids: Vec<&String> = pool.tables.keys().collect();
        let embedded = ids
            .par_iter()
            .map(|id| embedder.embed_table(&pool.tables[*id]).map(|e| ((*id).clone(), e)))
            .collect::<Result<Vec<_>, _>>()?;
        let entries: Vec<IndexEntry> = embedded
            .iter()
            .map(|(id, e)| IndexEntry::new(id.clone(), e.pool.concatenated.clone()))
            .collect();
        let hnsw = HnswIndex::build(&entries, params)?;
        Ok(SearchIndex {
            dim: embedder.dim(),
            tables: embedded.into_iter().collect(),
            hnsw,
        })
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TableEmbedding> {
        self.tables.get(id)
    }

    /// Writes `index.hnsw` and `catalog.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        fs::create_dir_all(dir)?;
        self.hnsw.save(&dir.join(INDEX_FILE))?;
        fs::write(dir.join(CATALOG_FILE), self.catalog_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, EngineError> {
        let hnsw = HnswIndex::load(&dir.join(INDEX_FILE))?;
        let (dim, tables) = parse_catalog(&fs::read(dir.join(CATALOG_FILE))?)?;
        if hnsw.len() != tables.len() || hnsw.ids().iter().any(|id| !tables.contains_key(id)) {
            return Err(EngineError::CorruptCatalog("catalog and index disagree on table ids".into()));
        }
        if !hnsw.is_empty() && hnsw.dim() != 2 * dim {
            return Err(EngineError::CorruptCatalog(format!(
                "index dimension {} is not twice the catalog dimension {dim}",
                hnsw.dim()
            )));
        }
        Ok(SearchIndex { dim, tables, hnsw })
    }

    fn catalog_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        let write = |w: &mut Vec<u8>| -> std::io::Result<()> {
            w.write_all(MAGIC)?;
            w.write_u32::<LE>(VERSION)?;
            w.write_u32::<LE>(self.dim as u32)?;
            w.write_u64::<LE>(self.tables.len() as u64)?;
            for (id, e) in &self.tables {
                w.write_u32::<LE>(id.len() as u32)?;
                w.write_all(id.as_bytes())?;
                w.write_u32::<LE>(e.columns.len() as u32)?;
                for &x in e.columns.iter().flatten().chain(&e.pool.metadata) {
                    w.write_f64::<LE>(x)?;
                }
            }
            Ok(())
        };
        write(&mut w).expect("writing to a Vec cannot fail");
        w
    }
}

fn parse_catalog(bytes: &[u8]) -> Result<(usize, BTreeMap<String, TableEmbedding>), EngineError> {
    let bad = |r: &str| EngineError::CorruptCatalog(r.to_string());
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LE>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported catalog version {version}")));
    }
    let dim = r.read_u32::<LE>().map_err(|_| bad("truncated header"))? as usize;
    let count = r.read_u64::<LE>().map_err(|_| bad("truncated header"))? as usize;
    if count > bytes.len() {
        return Err(bad("table count exceeds file size"));
    }
    let mut tables = BTreeMap::new();
    for _ in 0..count {
        let len = r.read_u32::<LE>().map_err(|_| bad("truncated id"))? as usize;
        if len > bytes.len() {
            return Err(bad("id length exceeds file size"));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|_| bad("truncated id"))?;
        let id = String::from_utf8(buf).map_err(|_| bad("id is not utf-8"))?;
        let ncols = r.read_u32::<LE>().map_err(|_| bad("truncated column count"))? as usize;
        if ncols.saturating_mul(dim).saturating_mul(8) > bytes.len() {
            return Err(bad("column count exceeds file size"));
        }
        let mut read = |n: usize| -> Result<Vec<f64>, EngineError> {
            (0..n).map(|_| r.read_f64::<LE>().map_err(|_| bad("truncated vector"))).collect()
        };
        let columns: Vec<Vec<f64>> = (0..ncols).map(|_| read(dim)).collect::<Result<_, _>>()?;
        let metadata = read(dim)?;
        let content = linalg::normalized_mean(&columns, dim);
        let e = TableEmbedding {
            columns,
            pool: PoolVector::new(content, metadata),
        };
        if tables.insert(id, e).is_some() {
            return Err(bad("duplicate table id"));
        }
    }
    if r.position() as usize != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((dim, tables))
}
