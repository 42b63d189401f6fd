//! Little-endian named-tensor container.
//!
//! ```text
//! magic[4] | u32 version (=1) | u32 tensor_count |
//!   { u32 name_len | name (UTF-8) | u32 ndim | ndim × u64 dims | f32 payload }*
//! ```
//! Magic `DSUF` marks feature files, `DSUT` model checkpoints.

use std::path::Path;

use crate::error::{DsuError, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: [u8; 4] = *b"DSUF";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DSUT";
pub const VERSION: u32 = 1;

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn encode(magic: [u8; 4], tensors: &[(String, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if !t.is_finite() {
            return Err(DsuError::NonFinite(format!("tensor {name} contains non-finite values")));
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(DsuError::Truncated {
                path: self.path.to_owned(),
                detail: format!("needed {n} bytes for {what} at offset {}, {} left", self.pos, self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], magic: [u8; 4], path: &Path) -> Result<NamedTensors> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    let found: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if found != magic {
        return Err(DsuError::BadMagic { path: path.to_owned(), expected: magic, found });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(DsuError::BadVersion(version));
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| DsuError::Truncated { path: path.to_owned(), detail: "tensor name is not UTF-8".into() })?
            .to_owned();
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u64("dims")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| DsuError::Truncated {
            path: path.to_owned(),
            detail: format!("tensor {name} has overflowing shape {shape:?}"),
        })?;
        let payload = r.take(n.saturating_mul(4), &format!("payload of {name}"))?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| DsuError::Truncated {
            path: path.to_owned(),
            detail: format!("tensor {name}: {e}"),
        })?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(DsuError::Truncated {
            path: path.to_owned(),
            detail: format!("{} trailing bytes after last tensor", bytes.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn write_container(path: &Path, magic: [u8; 4], tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    let bytes = encode(magic, tensors)?;
    std::fs::write(path, bytes).map_err(|e| DsuError::io(path, e))
}

pub fn read_container(path: &Path, magic: [u8; 4]) -> Result<NamedTensors> {
    let bytes = std::fs::read(path).map_err(|e| DsuError::io(path, e))?;
    decode(&bytes, magic, path)
}

/// Writes a feature file (`DSUF`).
pub fn write_feature_file(path: &Path, tensors: &[(String, &Tensor<f32>)]) -> Result<()> {
    write_container(path, FEATURE_MAGIC, tensors)
}

pub fn read_feature_file(path: &Path) -> Result<NamedTensors> {
    read_container(path, FEATURE_MAGIC)
}
