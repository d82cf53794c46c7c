//! Binary parameter snapshots.
//!
//! Layout (little endian): magic, `u32` version, `u32` length plus JSON
//! header (architecture and run metadata), `u32` tensor count, then per
//! tensor: `u32` name length, name bytes, `u32` rank, `u64` dims, `u8`
//! trainable flag, `f64` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ParameterSet};
use crate::error::{GrapeError, Result};
use crate::numcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRAPECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a set of parameters came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    /// Epoch whose parameters were kept (0 means untrained).
    pub epoch: usize,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub meta: RunMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    meta: RunMeta,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let params = &ckpt.params;
    let mut out = Vec::with_capacity(16 + params.parameter_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        architecture: params.arch.clone(),
        meta: ckpt.meta.clone(),
    })?;
    put_u32(&mut out, header.len());
    out.extend_from_slice(&header);
    put_u32(&mut out, params.tensors.len());
    for (name, t) in params.names.iter().zip(&params.tensors) {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(t.requires_grad() as u8);
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| GrapeError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(GrapeError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(GrapeError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(hlen)?)?;
    let count = r.u32()?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = r.u32()?;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| GrapeError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let trainable = r.take(1)?[0] != 0;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(8).ok_or_else(|| GrapeError::Checkpoint("shape overflow".into()))?)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut t = Tensor::new(shape, values)?;
        t.set_requires_grad(trainable);
        named.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(GrapeError::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(Checkpoint {
        params: ParameterSet::from_parts(header.architecture, named)?,
        meta: header.meta,
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)?).map_err(|e| GrapeError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| GrapeError::io(path, e))?)
}
