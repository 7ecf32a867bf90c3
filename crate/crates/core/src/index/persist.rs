//! Binary index files, little-endian throughout.
//!
//! ```text
//! header     magic "NLHNSW\0\0" | version u32 | dim u32 | m u32
//!            | ef_construction u32 | ef_search u32 | count u64 | seed u64
//!            | entry_point u32 (u32::MAX when empty)
//! nodes      per node: level u8, dim x f64
//! adjacency  per node, per layer 0..=level: len u32, len x u32
//! ids        per node: len u32, utf-8 bytes
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{HnswIndex, HnswParams, IndexError};

const MAGIC: &[u8; 8] = b"NLHNSW\0\0";
pub const FORMAT_VERSION: u32 = 1;
const NO_ENTRY: u32 = u32::MAX;

impl HnswIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.vectors.len() * 8 + self.len() * 64);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_u32::<LE>(self.dim as u32)?;
        w.write_u32::<LE>(self.params.m as u32)?;
        w.write_u32::<LE>(self.params.ef_construction as u32)?;
        w.write_u32::<LE>(self.params.ef_search as u32)?;
        w.write_u64::<LE>(self.len() as u64)?;
        w.write_u64::<LE>(self.params.seed)?;
        w.write_u32::<LE>(self.entry_point.unwrap_or(NO_ENTRY))?;
        for node in 0..self.len() {
            w.write_u8(self.level(node) as u8)?;
            for &x in self.vector(node) {
                w.write_f64::<LE>(x)?;
            }
        }
        for layers in &self.links {
            for list in layers {
                w.write_u32::<LE>(list.len() as u32)?;
                for &nb in list {
                    w.write_u32::<LE>(nb)?;
                }
            }
        }
        for id in &self.ids {
            w.write_u32::<LE>(id.len() as u32)?;
            w.write_all(id.as_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader(Cursor::new(bytes));
        let mut magic = [0u8; 8];
        r.fill(&mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(r.corrupt("bad magic"));
        }
        let version = r.u32("version")?;
        if version > FORMAT_VERSION || version == 0 {
            return Err(IndexError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let dim = r.u32("dim")? as usize;
        let params = HnswParams {
            m: r.u32("m")? as usize,
            ef_construction: r.u32("ef_construction")? as usize,
            ef_search: r.u32("ef_search")? as usize,
            seed: 0,
        };
        let count = r.u64("entry count")? as usize;
        let params = HnswParams {
            seed: r.u64("seed")?,
            ..params
        };
        params.validate().map_err(|e| r.corrupt(&e.to_string()))?;
        let entry = r.u32("entry point")?;
        // Each node needs at least level byte + vector + one adjacency length + id length.
        let min_node = 1 + 8 * dim + 4 + 4;
        if count > 0 && (count.saturating_mul(min_node)) > bytes.len() {
            return Err(r.corrupt("entry count exceeds file size"));
        }

        let mut levels = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count * dim);
        for _ in 0..count {
            levels.push(r.u8("node level")? as usize);
            for _ in 0..dim {
                vectors.push(r.f64("vector component")?);
            }
        }
        let mut links = Vec::with_capacity(count);
        for &level in &levels {
            let mut layers = Vec::with_capacity(level + 1);
            for layer in 0..=level {
                let len = r.u32("neighbor count")? as usize;
                if len > params.max_links(layer) {
                    return Err(r.corrupt("neighbor list exceeds degree bound"));
                }
                let mut list = Vec::with_capacity(len);
                for _ in 0..len {
                    let nb = r.u32("neighbor id")?;
                    if nb as usize >= count || levels[nb as usize] < layer {
                        return Err(r.corrupt("neighbor id out of range"));
                    }
                    list.push(nb);
                }
                layers.push(list);
            }
            links.push(layers);
        }
        let mut ids = Vec::with_capacity(count);
        let mut seen = HashSet::with_capacity(count);
        for _ in 0..count {
            let len = r.u32("id length")? as usize;
            if len > bytes.len() {
                return Err(r.corrupt("id length exceeds file size"));
            }
            let mut buf = vec![0u8; len];
            r.fill(&mut buf, "id bytes")?;
            let id = String::from_utf8(buf).map_err(|_| r.corrupt("id is not utf-8"))?;
            if !seen.insert(id.clone()) {
                return Err(r.corrupt("duplicate id"));
            }
            ids.push(id);
        }
        if (r.0.position() as usize) != bytes.len() {
            return Err(r.corrupt("trailing bytes"));
        }
        let entry_point = match (entry, count) {
            (NO_ENTRY, 0) => None,
            (e, n) if (e as usize) < n => Some(e),
            _ => return Err(r.corrupt("entry point out of range")),
        };
        Ok(HnswIndex {
            params,
            dim,
            ids,
            vectors,
            links,
            entry_point,
        })
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn corrupt(&self, reason: &str) -> IndexError {
        IndexError::CorruptIndex {
            offset: self.0.position(),
            reason: reason.to_string(),
        }
    }

    fn eof(&self, what: &str) -> IndexError {
        self.corrupt(&format!("truncated while reading {what}"))
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<(), IndexError> {
        self.0.read_exact(buf).map_err(|_| self.eof(what))
    }

    fn u8(&mut self, what: &str) -> Result<u8, IndexError> {
        self.0.read_u8().map_err(|_| self.eof(what))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        self.0.read_u32::<LE>().map_err(|_| self.eof(what))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IndexError> {
        self.0.read_u64::<LE>().map_err(|_| self.eof(what))
    }

    fn f64(&mut self, what: &str) -> Result<f64, IndexError> {
        self.0.read_f64::<LE>().map_err(|_| self.eof(what))
    }
}
