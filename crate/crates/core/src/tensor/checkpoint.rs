//! Named parameter blobs plus an architecture descriptor.
//!
//! ```text
//! "CKPT" | u32 version | u32 len, UTF-8 architecture descriptor
//! u32 parameter count
//! per parameter: u32 len, UTF-8 name | u8 dtype | u8 rank | rank x u32 dims
//!                | raw little-endian values (dtype 0 = f32, 1 = f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Result, Tensor, TensorError};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dtype: u8,
    pub shape: Vec<usize>,
    /// Values widened to f64; narrowing back to the stored dtype is exact.
    pub values: Vec<f64>,
}

impl CheckpointEntry {
    pub fn from_tensor<T: Scalar>(name: &str, t: &Tensor<T>) -> Self {
        Self {
            name: name.to_string(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            values: t.to_f64_vec(),
        }
    }

    pub fn to_scalars<T: Scalar>(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::of(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: String,
    pub entries: Vec<CheckpointEntry>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.architecture.len() as u32).to_le_bytes());
        out.extend_from_slice(self.architecture.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dtype);
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &e.values {
                match e.dtype {
                    0 => (v as f32).write_le(&mut out),
                    _ => v.write_le(&mut out),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(bad(format!("truncated at offset {pos}")));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = u32_at(take(4)?) as usize;
        let architecture = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("descriptor is not UTF-8"))?;
        let count = u32_at(take(4)?) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u32_at(take(4)?) as usize;
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
            let dtype = take(1)?[0];
            let rank = take(1)?[0] as usize;
            let shape: Vec<usize> = (0..rank).map(|_| take(4).map(|b| u32_at(b) as usize)).collect::<Result<_>>()?;
            let n: usize = shape.iter().product();
            let values = match dtype {
                0 => take(n * 4)?.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
                1 => take(n * 8)?.chunks_exact(8).map(f64::read_le).collect(),
                other => return Err(bad(format!("unknown dtype {other}"))),
            };
            entries.push(CheckpointEntry { name, dtype, shape, values });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { architecture, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
