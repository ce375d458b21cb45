//! `PEFTCKPT1` tensor files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! b"PEFTCKPT1"  record_count
//! per record:   tag_len tag  name_len name  ndim dim_0 .. dim_{ndim-1}  f64-LE values (row-major)
//! ```
//!
//! The tag is `backbone` for backbone tensors and the method name (`lora`,
//! `sora`, `prefix`, `qaa`) for adapter tensors.

use std::path::Path;

use peftlab_core::adapters::Method;
use peftlab_core::model::Model;

use crate::error::{AppError, AppResult};

pub const MAGIC: &[u8; 9] = b"PEFTCKPT1";
pub const BACKBONE_TAG: &str = "backbone";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub tag: String,
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a PEFTCKPT1 file")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("record {0}: string is not UTF-8")]
    BadString(String),
    #[error("record {name}: shape {shape:?} does not hold {len} values")]
    BadShape { name: String, shape: Vec<usize>, len: usize },
    #[error("checkpoint has no tensor named {0}")]
    Missing(String),
    #[error("checkpoint tensor {0} is not part of the model")]
    Unexpected(String),
    #[error("checkpoint mixes adapter tags {0} and {1}")]
    MixedTags(String, String),
    #[error("unknown adapter tag {0}")]
    UnknownTag(String),
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let values: usize = records.iter().map(|r| r.data.len()).sum();
    let mut out = Vec::with_capacity(16 + 8 * values + 64 * records.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, records.len());
    for r in records {
        put_str(&mut out, &r.tag);
        put_str(&mut out, &r.name);
        put_u32(&mut out, r.shape.len());
        for &d in &r.shape {
            put_u32(&mut out, d);
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String, CheckpointError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::BadString(what.into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>, CheckpointError> {
    let mut r = Reader { bytes };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let tag = r.string(&format!("#{i}"))?;
        let name = r.string(&format!("#{i}"))?;
        let ndim = r.u32()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(CheckpointError::Truncated)?;
        let raw = r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { tag, name, shape, data });
    }
    if !r.bytes.is_empty() {
        return Err(CheckpointError::TrailingBytes(r.bytes.len()));
    }
    Ok(records)
}

/// Every tensor of `model`, backbone first, in store order.
pub fn model_records(model: &Model) -> Vec<Record> {
    let backbone = model.backbone.ids();
    model
        .store
        .iter()
        .map(|(id, p)| Record {
            tag: if backbone.contains(&id) {
                BACKBONE_TAG.to_string()
            } else {
                model.method.name().to_string()
            },
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            data: p.tensor.data().to_vec(),
        })
        .collect()
}

/// The adapter method a checkpoint was written for.
pub fn method_of(records: &[Record]) -> Result<Method, CheckpointError> {
    let mut tag: Option<&str> = None;
    for r in records.iter().filter(|r| r.tag != BACKBONE_TAG) {
        match tag {
            None => tag = Some(&r.tag),
            Some(t) if t != r.tag => return Err(CheckpointError::MixedTags(t.into(), r.tag.clone())),
            _ => {}
        }
    }
    match tag {
        None => Ok(Method::Full),
        Some(t) => t.parse().map_err(|_| CheckpointError::UnknownTag(t.into())),
    }
}

/// Overwrites every tensor of `model` from `records`; names and shapes must
/// match exactly.
pub fn apply_records(model: &mut Model, records: &[Record]) -> Result<(), CheckpointError> {
    for r in records {
        let Some(id) = model.store.find(&r.name) else {
            return Err(CheckpointError::Unexpected(r.name.clone()));
        };
        let t = model.store.get_mut(id);
        if t.shape() != r.shape.as_slice() || t.len() != r.data.len() {
            return Err(CheckpointError::BadShape {
                name: r.name.clone(),
                shape: r.shape.clone(),
                len: t.len(),
            });
        }
        t.data_mut().copy_from_slice(&r.data);
    }
    for (_, p) in model.store.iter() {
        if !records.iter().any(|r| r.name == p.name) {
            return Err(CheckpointError::Missing(p.name.clone()));
        }
    }
    Ok(())
}

pub fn save(path: &Path, model: &Model) -> AppResult<()> {
    std::fs::write(path, encode(&model_records(model))).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> AppResult<Vec<Record>> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|e| AppError::Runtime(format!("{}: {e}", path.display())))
}
