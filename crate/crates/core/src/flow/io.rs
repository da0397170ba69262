//! FLO1: `"FLO1" | u32 width | u32 height | u32 pair_index` followed by the
//! u plane and the v plane as little-endian f32.

use std::io::{Read, Write};
use std::path::Path;

use super::{FlowError, FlowField, Result};
use crate::Scalar;

pub const FLO_MAGIC: &[u8; 4] = b"FLO1";
const HEADER: usize = 16;

pub fn write_flo<T: Scalar, W: Write>(flow: &FlowField<T>, pair_index: u32, mut out: W) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER + flow.data.len() * 4);
    buf.extend_from_slice(FLO_MAGIC);
    for v in [flow.width as u32, flow.height as u32, pair_index] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &flow.data {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Returns the field and its pair index.
pub fn read_flo<T: Scalar>(bytes: &[u8]) -> Result<(FlowField<T>, u32)> {
    if bytes.len() < HEADER {
        return Err(FlowError::Malformed(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != FLO_MAGIC {
        return Err(FlowError::Malformed("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let (width, height, pair) = (word(1) as usize, word(2) as usize, word(3));
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| FlowError::Malformed("dimensions overflow".into()))?;
    if bytes.len() - HEADER != expected {
        return Err(FlowError::Malformed(format!(
            "payload is {} bytes, expected {expected}",
            bytes.len() - HEADER
        )));
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Ok((FlowField { width, height, data }, pair))
}

pub fn write_flo_file<T: Scalar>(flow: &FlowField<T>, pair_index: u32, path: impl AsRef<Path>) -> Result<()> {
    write_flo(flow, pair_index, std::fs::File::create(path)?)
}

pub fn read_flo_file<T: Scalar>(path: impl AsRef<Path>) -> Result<(FlowField<T>, u32)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    read_flo(&bytes)
}
