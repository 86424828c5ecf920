//! `RTNS` raw tensor files, little-endian:
//!
//! ```text
//! magic "RTNS" | version u8 = 1 | dtype u8 (1 = f32) | ndim u32 | dims u64 * ndim | data
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{element_count, Tensor};
use crate::wire::{expect_end, Cursor};

pub const MAGIC: [u8; 4] = *b"RTNS";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + 8 * tensor.shape().len() + 4 * tensor.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor::new(bytes);
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = cur.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = cur.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::MalformedHeader(format!("unsupported dtype code {dtype}")));
    }
    let ndim = cur.u32()? as u64;
    cur.need(ndim.saturating_mul(8))?;
    let shape = (0..ndim)
        .map(|_| {
            let d = cur.u64()?;
            usize::try_from(d).map_err(|_| Error::MalformedHeader(format!("dimension {d} too large")))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = element_count(&shape)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::MalformedHeader(format!("shape {shape:?} overflows")))?;
    let data = cur
        .take(n * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    expect_end(cur.rest())?;
    Tensor::new(shape, data)
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    std::fs::read(path)
        .map_err(Error::from)
        .and_then(|b| decode(&b))
        .map_err(|e| e.at_path(path))
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&encode(tensor)))
        .map_err(|e| Error::from(e).at_path(path))
}
