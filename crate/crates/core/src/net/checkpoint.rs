//! Binary checkpoint serialization.
//!
//! Layout: magic `CKPT`, little-endian u32 entry count, then per entry a
//! u16 name length, the name bytes, a u8 rank, the u32 dimensions, and
//! the values as little-endian f64. Round-trips bit-exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::Tensor;

const MAGIC: &[u8; 4] = b"CKPT";

/// Ordered named tensors snapshotted from a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, tensor) in &self.entries {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |reason: &str| Error::Format {
            format: "CKPT",
            reason: reason.to_string(),
        };
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if at + n > bytes.len() {
                return Err(bad("unexpected end of data"));
            }
            let s = &bytes[at..at + n];
            at += n;
            Ok(s)
        };

        if take(4)? != MAGIC {
            return Err(bad("missing CKPT magic"));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|_| bad("entry name is not UTF-8"))?
                .to_string();
            let rank = take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
            }
            let len: usize = shape.iter().product();
            let mut values = Vec::with_capacity(len);
            let raw = take(len * 8)?;
            for chunk in raw.chunks_exact(8) {
                values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            entries.push((name, Tensor::new(shape, values)));
        }
        if at != bytes.len() {
            return Err(bad("trailing bytes after last entry"));
        }
        Ok(Checkpoint { entries })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}
