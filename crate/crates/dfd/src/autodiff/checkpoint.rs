//! Flat binary weight checkpoints.
//!
//! Layout: magic `DFDW`, one version byte, then per-parameter records until
//! end of file. Each record is `u32` name length, the UTF-8 name bytes,
//! `u8` rank, `u32` per dimension, then the row-major values as
//! little-endian `f32`.

use std::fs;
use std::path::Path;

use super::{AdResult, AutodiffError};

pub const DFDW_MAGIC: &[u8; 4] = b"DFDW";
pub const DFDW_VERSION: u8 = 1;

/// A named tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn save_dfdw(tensors: &[NamedTensor], path: &Path) -> AdResult<()> {
    let mut out = Vec::new();
    out.extend_from_slice(DFDW_MAGIC);
    out.push(DFDW_VERSION);
    for t in tensors {
        let expect: usize = t.shape.iter().product();
        if expect != t.data.len() {
            return Err(AutodiffError::Checkpoint(format!(
                "tensor '{}': shape {:?} does not cover {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| AutodiffError::Checkpoint(format!("write {path:?}: {e}")))
}

pub fn load_dfdw(path: &Path) -> AdResult<Vec<NamedTensor>> {
    let bytes =
        fs::read(path).map_err(|e| AutodiffError::Checkpoint(format!("read {path:?}: {e}")))?;
    let bad = |msg: &str| AutodiffError::Checkpoint(format!("{path:?}: {msg}"));
    if bytes.len() < 5 || &bytes[0..4] != DFDW_MAGIC {
        return Err(bad("missing DFDW magic"));
    }
    if bytes[4] != DFDW_VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let mut pos = 5usize;
    let mut tensors = Vec::new();
    let read_u32 = |bytes: &[u8], pos: usize| -> Option<u32> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    };
    while pos < bytes.len() {
        let name_len = read_u32(&bytes, pos).ok_or_else(|| bad("truncated name length"))? as usize;
        pos += 4;
        let name = String::from_utf8(
            bytes
                .get(pos..pos + name_len)
                .ok_or_else(|| bad("truncated name"))?
                .to_vec(),
        )
        .map_err(|_| bad("name is not UTF-8"))?;
        pos += name_len;
        let rank = *bytes.get(pos).ok_or_else(|| bad("truncated rank"))? as usize;
        pos += 1;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&bytes, pos).ok_or_else(|| bad("truncated dims"))? as usize);
            pos += 4;
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let end = pos + numel * 4;
        let payload = bytes.get(pos..end).ok_or_else(|| bad("truncated values"))?;
        for chunk in payload.chunks_exact(4) {
            data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        pos = end;
        tensors.push(NamedTensor { name, shape, data });
    }
    Ok(tensors)
}
