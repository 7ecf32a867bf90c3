//! Model checkpoints, little-endian.
//!
//! ```text
//! magic "NLCKPT\0\0" | version u32 | dim u32 | hidden u32
//! | head layers u32 | per head layer: out u32, in u32 | lambda f64
//! tensors    W1, b1, W2, b2, head.0.W, head.0.b, ... as f64
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::TrainError;
use crate::nlc::{CrossFusionModel, DenseLayer, FusionHead, Matrix};

const MAGIC: &[u8; 8] = b"NLCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_HEAD_LAYERS: usize = 64;

fn corrupt(reason: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint(reason.into())
}

pub fn checkpoint_bytes(model: &CrossFusionModel) -> Vec<u8> {
    let mut w = Vec::new();
    write_checkpoint(model, &mut w).expect("writing to a Vec cannot fail");
    w
}

fn write_checkpoint<W: Write>(model: &CrossFusionModel, w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(CHECKPOINT_VERSION)?;
    w.write_u32::<LE>(model.dim as u32)?;
    w.write_u32::<LE>(model.hidden as u32)?;
    w.write_u32::<LE>(model.head.layers.len() as u32)?;
    for l in &model.head.layers {
        w.write_u32::<LE>(l.out_dim() as u32)?;
        w.write_u32::<LE>(l.in_dim() as u32)?;
    }
    w.write_f64::<LE>(model.lambda)?;
    let layers = [&model.interaction, &model.metadata]
        .into_iter()
        .chain(model.head.layers.iter());
    for l in layers {
        for &x in l.weight.data.iter().chain(&l.bias) {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &CrossFusionModel, path: &Path) -> Result<(), TrainError> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CrossFusionModel, TrainError> {
    checkpoint_from_bytes(&fs::read(path)?)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<CrossFusionModel, TrainError> {
    let mut r = Cursor::new(bytes);
    let eof = |what: &str| corrupt(format!("truncated while reading {what}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| eof("magic"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.read_u32::<LE>().map_err(|_| eof("version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let dim = r.read_u32::<LE>().map_err(|_| eof("dim"))? as usize;
    let hidden = r.read_u32::<LE>().map_err(|_| eof("hidden"))? as usize;
    let n_head = r.read_u32::<LE>().map_err(|_| eof("head layer count"))? as usize;
    if n_head == 0 || n_head > MAX_HEAD_LAYERS {
        return Err(corrupt(format!("implausible head layer count {n_head}")));
    }
    let mut shapes = vec![(hidden, 4 * dim), (hidden, 4 * dim)];
    for _ in 0..n_head {
        let out = r.read_u32::<LE>().map_err(|_| eof("head shape"))? as usize;
        let inp = r.read_u32::<LE>().map_err(|_| eof("head shape"))? as usize;
        shapes.push((out, inp));
    }
    let lambda = r.read_f64::<LE>().map_err(|_| eof("lambda"))?;
    let floats: usize = shapes.iter().map(|(o, i)| o.saturating_mul(*i).saturating_add(*o)).sum();
    let remaining = bytes.len() - r.position() as usize;
    if floats.saturating_mul(8) != remaining {
        return Err(corrupt(format!(
            "tensor payload is {remaining} bytes, shapes need {}",
            floats.saturating_mul(8)
        )));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (out, inp) in shapes {
        let mut read = |n: usize| -> Result<Vec<f64>, TrainError> {
            (0..n).map(|_| r.read_f64::<LE>().map_err(|_| eof("tensor"))).collect()
        };
        let data = read(out * inp)?;
        let bias = read(out)?;
        layers.push(DenseLayer {
            weight: Matrix {
                rows: out,
                cols: inp,
                data,
            },
            bias,
        });
    }
    let mut it = layers.into_iter();
    let model = CrossFusionModel {
        dim,
        hidden,
        interaction: it.next().expect("two fixed layers"),
        metadata: it.next().expect("two fixed layers"),
        head: FusionHead { layers: it.collect() },
        lambda,
    };
    model.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(model)
}
