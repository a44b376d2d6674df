//! `PRCT` tensor dumps.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | field                         |
//! |--------------|-------------------------------|
//! | 4            | magic `b"PRCT"`               |
//! | 2            | version (`u16`, currently 1)  |
//! | 2            | rank (`u16`)                  |
//! | 4 × rank     | dims (`u32` each)             |
//! | 4 × ∏ dims   | payload (`f32`, row-major)    |

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PRCT";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorDump {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(Error::TensorDump(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if dims.len() > u16::MAX as usize {
            return Err(Error::TensorDump(format!("rank {} too large", dims.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u16).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::TensorDump(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::TensorDump(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::TensorDump(format!("unsupported version {version}")));
        }
        let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let header = 8 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::TensorDump(format!(
                "truncated dims: need {header} bytes, have {}",
                bytes.len()
            )));
        }
        let dims: Vec<u32> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let count = element_count(&dims)?;
        let payload = &bytes[header..];
        if Some(payload.len()) != count.checked_mul(4) {
            return Err(Error::TensorDump(format!(
                "payload is {} bytes, dims {dims:?} need {}",
                payload.len(),
                count.saturating_mul(4)
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::TensorDump(format!("dims {dims:?} overflow")))
}
