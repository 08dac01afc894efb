//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `CIPA`, u32 version, u32 header length and a
//! UTF-8 `key=value` header, u32 parameter count, then per parameter: u32 name
//! length, name bytes, u32 rank, u32 dims, f32 values.

use std::path::Path;

use super::{NumericsError, ParamStore, Result, Tensor};
use crate::binio::{put_f32s, put_u32, write_atomic, Reader, Truncated, MAGIC};

pub const CHECKPOINT_VERSION: u32 = 1;

impl From<Truncated> for NumericsError {
    fn from(_: Truncated) -> Self {
        NumericsError::TruncatedFile
    }
}

pub fn checkpoint_bytes(store: &ParamStore, header: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_values() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(header.as_bytes());
    put_u32(&mut out, store.len() as u32);
    for id in store.ids() {
        let name = store.name(id);
        let t = store.get(id);
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, t.data.iter().map(|&v| v as f32));
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(ParamStore, String)> {
    let mut r = Reader::new(bytes);
    if r.bytes(4).map_err(|_| NumericsError::BadMagic)? != MAGIC {
        return Err(NumericsError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NumericsError::VersionUnsupported(version));
    }
    let hlen = r.u32()? as usize;
    let header = String::from_utf8(r.bytes(hlen)?.to_vec())
        .map_err(|_| NumericsError::Malformed("header is not UTF-8".into()))?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(nlen)?.to_vec())
            .map_err(|_| NumericsError::Malformed("parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(NumericsError::TruncatedFile)?;
        let data = r.f32s(n)?.into_iter().map(f64::from).collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    if !r.is_at_end() {
        return Err(NumericsError::Malformed("trailing bytes after the last parameter".into()));
    }
    Ok((store, header))
}

/// Values are stored as f32, so parameters round to single precision.
pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore, header: &str) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_bytes(store, header))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamStore, String)> {
    parse_checkpoint(&std::fs::read(path)?)
}
