//! `MRGW` parameter files.
//!
//! Layout, all integers little-endian `u32`:
//! magic `b"MRGW"`, version, array count, then per array: name length, UTF-8
//! name, rank, extents, and `f32` little-endian payload.

use std::io::{Read, Write};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRGW";
pub const CHECKPOINT_VERSION: u32 = 1;

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "MRGW",
        detail: detail.into(),
    }
}

fn io_err(e: std::io::Error) -> Error {
    format_err(e.to_string())
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamSet) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + params.num_scalars() * 4);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&u32_len(params.len())?.to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&u32_len(name.len())?.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&u32_len(t.shape().len())?.to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&u32_len(e)?.to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io_err)
}

fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| format_err(format!("{n} does not fit in u32")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| format_err(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(io_err)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if params.get(&name).is_some() {
            return Err(format_err(format!("duplicate array `{name}`")));
        }
        params.insert(name, Tensor::new(&shape, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io_err)? != 0 {
        return Err(format_err("trailing bytes after last array"));
    }
    Ok(params)
}
