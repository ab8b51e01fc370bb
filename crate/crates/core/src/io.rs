//! Binary containers for tensors and feature matrices.
//!
//! Tensor file (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "CPTENS01"
//! height    u32
//! width     u32
//! depth     u32
//! rectified u8       0 or 1
//! payload   height*width*depth f32, row-major (row, column, channel)
//! ```
//!
//! Feature-matrix file:
//!
//! ```text
//! magic     8 bytes  "CPMATX01"
//! count     u32
//! dim       u32
//! payload   count*dim f32, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ActivationTensor, FeatureMatrix};

pub const TENSOR_MAGIC: &[u8; 8] = b"CPTENS01";
pub const MATRIX_MAGIC: &[u8; 8] = b"CPMATX01";

/// Bytes preceding the payload of a tensor file.
pub const TENSOR_HEADER_LEN: usize = 8 + 3 * 4 + 1;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let rest = &self.buf[self.pos..];
        if rest.len() < magic.len() || &rest[..magic.len()] != magic {
            return Err(Error::Format(format!(
                "expected magic {:?} at offset {}",
                String::from_utf8_lossy(magic),
                self.pos
            )));
        }
        self.pos += magic.len();
        Ok(())
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Corruption(format!(
                    "truncated: needed {n} bytes at offset {}, {} available",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Corruption("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Corruption("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Validation(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_tensor(tensor: &ActivationTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + tensor.values().len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    put_u32(&mut out, tensor.height())?;
    put_u32(&mut out, tensor.width())?;
    put_u32(&mut out, tensor.depth())?;
    out.push(u8::from(tensor.rectified()));
    put_f32s(&mut out, tensor.values());
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<ActivationTensor> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(TENSOR_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let depth = r.u32()? as usize;
    let flag = r.u8()?;
    if height == 0 || width == 0 || depth == 0 {
        return Err(Error::Validation(format!(
            "tensor header has zero dimension: {height}x{width}x{depth}"
        )));
    }
    let rectified = match flag {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("rectified flag must be 0 or 1, got {other}"))),
    };
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(depth))
        .ok_or_else(|| Error::Corruption("tensor dimensions overflow".into()))?;
    let values = r.f32s(n)?;
    r.finish()?;
    ActivationTensor::new(height, width, depth, values)?.with_rectified(rectified)
}

pub fn save_tensor(tensor: &ActivationTensor, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_tensor(tensor)?)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<ActivationTensor> {
    decode_tensor(&read_file(path.as_ref())?)
}

pub fn encode_matrix(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + m.values().len() * 4);
    out.extend_from_slice(MATRIX_MAGIC);
    put_u32(&mut out, m.count())?;
    put_u32(&mut out, m.dim())?;
    put_f32s(&mut out, m.values());
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MATRIX_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::Validation("matrix header has zero dim".into()));
    }
    let n = count
        .checked_mul(dim)
        .ok_or_else(|| Error::Corruption("matrix dimensions overflow".into()))?;
    let values = r.f32s(n)?;
    r.finish()?;
    FeatureMatrix::new(count, dim, values)
}

pub fn save_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_matrix(m)?)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    decode_matrix(&read_file(path.as_ref())?)
}
