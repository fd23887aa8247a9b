//! Binary tensor interchange: `MEMT`, a dimension count, little-endian u32
//! dimensions, then row-major little-endian f32 data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"MEMT";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::param("too many tensor dimensions"));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::param("tensor dimension exceeds u32"));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::param(format!(
                "dims {dims:?} describe {count} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Codec("tensor header truncated".into()));
        }
        if bytes[..4] != TENSOR_MAGIC {
            return Err(Error::Codec("bad tensor magic".into()));
        }
        let ndim = bytes[4] as usize;
        let data_start = 5 + 4 * ndim;
        if bytes.len() < data_start {
            return Err(Error::Codec("tensor dimensions truncated".into()));
        }
        let dims: Vec<usize> = bytes[5..data_start]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Codec("tensor element count overflows".into()))?;
        let body = &bytes[data_start..];
        if count.checked_mul(4) != Some(body.len()) {
            return Err(Error::Codec(format!(
                "expected {} data bytes, found {}",
                count.saturating_mul(4),
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, t.encode())?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Tensor::decode(&fs::read(path)?)
}
