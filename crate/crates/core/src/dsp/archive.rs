//! Feature archives: magic `MMFA`, version `u16`, frame count `u32`, dim
//! `u32`, then row-major little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const MAGIC: &[u8; 4] = b"MMFA";
pub const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 4 + 4;

pub fn encode(values: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * values.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(values.cols() as u32).to_le_bytes());
    for &v in values.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Matrix> {
    let fail = |reason: String| Error::Format {
        format: "feature archive",
        path: origin.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(fail("bad magic or truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let frames = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let body = &bytes[HEADER..];
    if body.len() as u64 != 4 * frames as u64 * dim as u64 {
        return Err(fail(format!("expected {frames}x{dim} values, body has {} bytes", body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Matrix::from_vec(frames, dim, data)
}

pub fn write(path: &Path, values: &Matrix) -> Result<()> {
    std::fs::write(path, encode(values))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Matrix> {
    decode(&std::fs::read(path)?, path)
}
