//! Model checkpoints: JSON metadata followed by a raw weight blob.
//!
//! ```text
//! "IT2PCKPT"  u32 meta_len  meta_json
//! u32 n_params  { u32 name_len  name  u32 rank  u32 dims…  values (dtype, LE) }*
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::language::Vocab;
use crate::nn::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IT2PCKPT";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    /// `t2p`, `qgn` or `baseline`.
    pub kind: String,
    pub dtype: String,
    pub vocab_hash: String,
    pub n_i: usize,
    pub n_m: usize,
    pub hyperparameters: serde_json::Value,
    pub train_seed: u64,
    #[serde(default)]
    pub training: serde_json::Value,
}

impl CheckpointMeta {
    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        if self.vocab_hash != vocab.hash() {
            return Err(Error::Compatibility(format!(
                "{} checkpoint was trained with vocabulary {}, active vocabulary is {}",
                self.kind,
                short(&self.vocab_hash),
                short(&vocab.hash())
            )));
        }
        Ok(())
    }

    pub fn check_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Compatibility(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

pub fn encode<T: Scalar>(meta: &CheckpointMeta, params: &ParamStore<T>) -> Vec<u8> {
    let json = serde_json::to_vec(meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(16 + json.len() + params.num_scalars() * T::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format { offset: self.bytes.len(), msg: format!("need {n} more bytes at {}", self.pos) });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses only the metadata header.
pub fn decode_meta(bytes: &[u8]) -> Result<CheckpointMeta> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Version("not an it2p checkpoint".into()));
    }
    let len = r.u32()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Version(format!("checkpoint schema {} (supported: {SCHEMA_VERSION})", meta.schema_version)));
    }
    Ok(meta)
}

/// Parses a checkpoint and copies every stored tensor into the matching,
/// already-built parameter of `params`.
pub fn decode_into<T: Scalar>(bytes: &[u8], params: &mut ParamStore<T>) -> Result<CheckpointMeta> {
    let meta = decode_meta(bytes)?;
    if meta.dtype != T::DTYPE {
        return Err(Error::Compatibility(format!("checkpoint holds {} weights, model uses {}", meta.dtype, T::DTYPE)));
    }
    let mut r = Reader { bytes, pos: 0 };
    r.take(8)?;
    let len = r.u32()?;
    r.take(len)?;
    let count = r.u32()?;
    if count != params.len() {
        return Err(Error::Compatibility(format!("checkpoint has {count} tensors, model expects {}", params.len())));
    }
    for _ in 0..count {
        let name_len = r.u32()?;
        let offset = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format { offset, msg: "parameter name is not UTF-8".into() })?
            .to_string();
        let rank = r.u32()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * T::BYTES)?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let id = params.id(&name).ok_or_else(|| Error::Compatibility(format!("unexpected parameter {name}")))?;
        if params.get(id).shape() != shape.as_slice() {
            return Err(Error::Compatibility(format!(
                "parameter {name} has shape {shape:?}, model expects {:?}",
                params.get(id).shape()
            )));
        }
        *params.get_mut(id) = Tensor::from_vec(&shape, data);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format { offset: r.pos, msg: "trailing bytes after weights".into() });
    }
    Ok(meta)
}

pub fn write<T: Scalar>(path: &Path, meta: &CheckpointMeta, params: &ParamStore<T>) -> Result<()> {
    std::fs::write(path, encode(meta, params))?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    decode_meta(&std::fs::read(path)?)
}
