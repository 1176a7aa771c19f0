//! RNLT binary tensor files.
//!
//! Layout: magic "RNLT", u8 version (=1), u8 dtype (0=f32, 1=f64), u8 rank,
//! one padding byte, rank little-endian u32 extents, then the raw
//! little-endian values row-major. The loader validates magic, version,
//! dtype, and that the payload size matches the header exactly.

use std::fs;
use std::path::Path;

use crate::element::{Dtype, Element};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"RNLT";
const VERSION: u8 = 1;
const HEADER: usize = 8;

/// A tensor of either storage precision, as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl DynTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            DynTensor::F32(_) => Dtype::F32,
            DynTensor::F64(_) => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(t) => t.shape(),
            DynTensor::F64(t) => t.shape(),
        }
    }

    /// Convert to the requested element type, rounding if narrowing.
    pub fn cast<E: Element>(&self) -> Tensor<E> {
        let (shape, values): (Vec<usize>, Vec<f64>) = match self {
            DynTensor::F32(t) => (t.shape().to_vec(), t.iter_f64().collect()),
            DynTensor::F64(t) => (t.shape().to_vec(), t.iter_f64().collect()),
        };
        Tensor::from_f64_slice(shape, &values).expect("shape/data consistent by construction")
    }
}

pub fn encode<E: Element>(tensor: &Tensor<E>) -> Result<Vec<u8>> {
    let rank = tensor.rank();
    if rank > u8::MAX as usize {
        return Err(Error::Format(format!("rank {rank} exceeds the format limit")));
    }
    let mut out = Vec::with_capacity(HEADER + rank * 4 + tensor.len() * E::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(E::DTYPE.code());
    out.push(rank as u8);
    out.push(0); // padding
    for &extent in tensor.shape() {
        if extent > u32::MAX as usize {
            return Err(Error::Format(format!("extent {extent} exceeds u32")));
        }
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DynTensor> {
    if bytes.len() < HEADER {
        return Err(Error::Format("file shorter than the 8-byte header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, not an RNLT tensor file".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let dtype = Dtype::from_code(bytes[5])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[5])))?;
    let rank = bytes[6] as usize;
    if rank == 0 {
        return Err(Error::Format("rank must be >= 1".into()));
    }
    let dims_end = HEADER + rank * 4;
    if bytes.len() < dims_end {
        return Err(Error::Format("file truncated inside the extent list".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut count: usize = 1;
    for i in 0..rank {
        let off = HEADER + i * 4;
        let extent = u32::from_le_bytes([
            bytes[off],
            bytes[off + 1],
            bytes[off + 2],
            bytes[off + 3],
        ]) as usize;
        if extent == 0 {
            return Err(Error::Format(format!("extent {i} is zero")));
        }
        count = count
            .checked_mul(extent)
            .ok_or_else(|| Error::Format("element count overflow".into()))?;
        shape.push(extent);
    }
    let expected = dims_end + count * dtype.size();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload size mismatch: expected {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[dims_end..];
    Ok(match dtype {
        Dtype::F32 => {
            let data: Vec<f32> = payload.chunks_exact(4).map(f32::read_le).collect();
            DynTensor::F32(Tensor::new(shape, data)?)
        }
        Dtype::F64 => {
            let data: Vec<f64> = payload.chunks_exact(8).map(f64::read_le).collect();
            DynTensor::F64(Tensor::new(shape, data)?)
        }
    })
}

pub fn write_tensor<E: Element>(path: impl AsRef<Path>, tensor: &Tensor<E>) -> Result<()> {
    fs::write(path, encode(tensor)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DynTensor> {
    let bytes = fs::read(path.as_ref())?;
    decode(&bytes)
}
