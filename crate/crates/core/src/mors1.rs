//! MORS1 binary tensor container.
//!
//! Layout: magic `4D 4F 52 53 31 00`, dtype code (u8, 1 = f32, 2 = f64),
//! rank (u8), `rank` little-endian u64 dims, then little-endian scalars in
//! row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::dtype::{DType, Scalar};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 6] = *b"MORS1\0";

/// A decoded tensor of either supported dtype.
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
}

/// Conversion to and from [`AnyTensor`]; `from_any` refuses a dtype change.
pub trait AnyScalar: Scalar {
    fn from_any(any: AnyTensor) -> Option<Tensor<Self>>;
    fn into_any(t: Tensor<Self>) -> AnyTensor;
}

impl AnyScalar for f32 {
    fn from_any(any: AnyTensor) -> Option<Tensor<f32>> {
        match any {
            AnyTensor::F32(t) => Some(t),
            AnyTensor::F64(_) => None,
        }
    }

    fn into_any(t: Tensor<f32>) -> AnyTensor {
        AnyTensor::F32(t)
    }
}

impl AnyScalar for f64 {
    fn from_any(any: AnyTensor) -> Option<Tensor<f64>> {
        match any {
            AnyTensor::F64(t) => Some(t),
            AnyTensor::F32(_) => None,
        }
    }

    fn into_any(t: Tensor<f64>) -> AnyTensor {
        AnyTensor::F64(t)
    }
}

pub fn encode<T: Scalar>(tensor: &Tensor<T>, out: &mut Vec<u8>) -> Result<()> {
    let rank = u8::try_from(tensor.rank())
        .map_err(|_| Error::dim("mors1::encode", format!("rank {} > 255", tensor.rank())))?;
    out.extend_from_slice(&MAGIC);
    out.push(T::DTYPE.code());
    out.push(rank);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    T::to_le_bytes_vec(tensor.data(), out);
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> std::result::Result<(), String> {
    r.read_exact(buf)
        .map_err(|e| format!("truncated while reading {what}: {e}"))
}

/// Decode one MORS1 payload from a stream, leaving the stream positioned
/// right after it.
pub fn decode_from<R: Read>(r: &mut R) -> std::result::Result<AnyTensor, String> {
    let mut magic = [0u8; 6];
    read_exact(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(format!("bad magic {magic:02X?}"));
    }
    let mut head = [0u8; 2];
    read_exact(r, &mut head, "header")?;
    let dtype = DType::from_code(head[0]).ok_or_else(|| format!("unknown dtype code {}", head[0]))?;
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 8];
        read_exact(r, &mut d, "dims")?;
        let d = u64::from_le_bytes(d);
        shape.push(usize::try_from(d).map_err(|_| format!("dim {d} too large"))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("element count overflows")?;
    let nbytes = n.checked_mul(dtype.size()).ok_or("byte count overflows")?;
    let mut raw = vec![0u8; nbytes];
    read_exact(r, &mut raw, "data")?;
    let tensor = match dtype {
        DType::F32 => AnyTensor::F32(
            Tensor::from_vec(shape, raw.chunks_exact(4).map(f32::from_le_chunk).collect())
                .map_err(|e| e.to_string())?,
        ),
        DType::F64 => AnyTensor::F64(
            Tensor::from_vec(shape, raw.chunks_exact(8).map(f64::from_le_chunk).collect())
                .map_err(|e| e.to_string())?,
        ),
    };
    Ok(tensor)
}

pub fn to_bytes<T: Scalar>(tensor: &Tensor<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode(tensor, &mut out)?;
    Ok(out)
}

pub fn write_file<T: Scalar>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(tensor)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = &bytes[..];
    let t = decode_from(&mut cursor).map_err(|detail| Error::Format {
        path: path.to_path_buf(),
        detail,
    })?;
    if !cursor.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("{} trailing bytes", cursor.len()),
        });
    }
    Ok(t)
}

pub fn read_file<T: AnyScalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let any = read_file_any(path)?;
    let found = any.dtype();
    T::from_any(any).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        detail: format!("expected dtype {:?}, file holds {:?}", T::DTYPE, found),
    })
}
