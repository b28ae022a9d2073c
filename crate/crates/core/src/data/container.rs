//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ICTN"  u16 version=1  u32 count
//! count x { u16 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64), u8 rank,
//!           rank x u64 dim, row-major payload }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{check_shape, DType, Scalar, Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"ICTN";
pub const VERSION: u16 = 1;

/// A tensor of either supported element type.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    pub fn bitwise_eq(&self, other: &AnyTensor) -> bool {
        match (self, other) {
            (AnyTensor::F32(a), AnyTensor::F32(b)) => a.bitwise_eq(b),
            (AnyTensor::F64(a), AnyTensor::F64(b)) => a.bitwise_eq(b),
            _ => false,
        }
    }

    /// Converts to `T`, failing if the stored dtype differs.
    pub fn into_typed<T: Scalar>(self) -> Result<Tensor<T>> {
        let found = self.dtype();
        if found != T::DTYPE {
            return Err(Error::InvalidInput(format!(
                "expected {:?} tensor, found {found:?}",
                T::DTYPE
            )));
        }
        Ok(match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        })
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) {
    out.push(T::DTYPE.tag());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Serializes named tensors in the given order.
pub fn encode(entries: &[(String, AnyTensor)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::InvalidInput(format!(
                "entry name must be 1..=65535 bytes, got {}",
                name.len()
            )));
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::InvalidInput(format!("duplicate entry name `{name}`")));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        match t {
            AnyTensor::F32(t) => put_tensor(&mut out, t),
            AnyTensor::F64(t) => put_tensor(&mut out, t),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn payload<T: Scalar>(&mut self, shape: &[usize], numel: usize) -> Result<Tensor<T>> {
        let size = T::DTYPE.size();
        let bytes = match numel.checked_mul(size) {
            Some(b) => b,
            None => return self.fail("payload size overflows"),
        };
        let raw = self.take(bytes, "payload")?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(shape, data)
    }
}

/// Parses a container, reporting the byte offset of the first problem.
pub fn decode(buf: &[u8]) -> Result<Vec<(String, AnyTensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return r.fail("bad magic");
    }
    let version = r.u16("version")?;
    if version != VERSION {
        r.pos -= 2;
        return r.fail(format!("unsupported version {version}"));
    }
    let count = r.u32("entry count")?;
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for _ in 0..count {
        let start = r.pos;
        let len = r.u16("name length")? as usize;
        if len == 0 {
            r.pos = start;
            return r.fail("empty entry name");
        }
        let name_bytes = r.take(len, "name")?;
        let name = match std::str::from_utf8(name_bytes) {
            Ok(s) => s.to_string(),
            Err(_) => {
                r.pos -= len;
                return r.fail("entry name is not UTF-8");
            }
        };
        if !seen.insert(name.clone()) {
            r.pos = start;
            return r.fail(format!("duplicate entry `{name}`"));
        }
        let tag = r.u8("dtype")?;
        let dtype = match DType::from_tag(tag) {
            Some(d) => d,
            None => {
                r.pos -= 1;
                return r.fail(format!("unknown dtype tag {tag}"));
            }
        };
        let rank = r.u8("rank")? as usize;
        if rank == 0 || rank > MAX_RANK {
            r.pos -= 1;
            return r.fail(format!("rank {rank} outside 1..={MAX_RANK}"));
        }
        let dims_at = r.pos;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = r.u64("dimension")?;
            match usize::try_from(d) {
                Ok(d) => shape.push(d),
                Err(_) => return r.fail("dimension exceeds address space"),
            }
        }
        let numel = match shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)) {
            Some(n) if check_shape(&shape).is_ok() => n,
            _ => {
                r.pos = dims_at;
                return r.fail(format!("invalid shape {shape:?}"));
            }
        };
        let t = match dtype {
            DType::F32 => AnyTensor::F32(r.payload(&shape, numel)?),
            DType::F64 => AnyTensor::F64(r.payload(&shape, numel)?),
        };
        entries.push((name, t));
    }
    if r.pos != buf.len() {
        return r.fail(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(entries)
}

pub fn write_container(entries: &[(String, AnyTensor)], path: &Path) -> Result<()> {
    let bytes = encode(entries)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<Vec<(String, AnyTensor)>> {
    decode(&fs::read(path)?)
}
