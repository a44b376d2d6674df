//! IDX files as used by MNIST: a big-endian `u32` magic, one big-endian
//! `u32` per dimension, then the raw `u8` payload.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::{normalize_u8, Batch, Image, ImageU8};
use crate::trainer::Dataset;

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
    /// Payload length in bytes.
    pub payload_len: usize,
}

impl IdxHeader {
    pub fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// Images normalized to [-1, 1], with dims (count, rows, cols).
    Images {
        dims: [usize; 3],
        images: Vec<Image>,
    },
    Labels(Vec<usize>),
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::IdxTruncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

/// Validates magic, dimensions and payload length without touching the payload.
pub fn parse_idx_header(bytes: &[u8]) -> Result<IdxHeader> {
    let magic = read_u32(bytes, 0)?;
    let rank = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => return Err(Error::IdxBadMagic(other)),
    };
    let raw: Vec<u32> = (0..rank)
        .map(|i| read_u32(bytes, 4 + 4 * i))
        .collect::<Result<_>>()?;
    let payload_len = raw
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .filter(|&n| n <= isize::MAX as usize)
        .ok_or_else(|| Error::IdxDimensionOverflow(raw.clone()))?;
    let header = IdxHeader {
        magic,
        dims: raw.iter().map(|&d| d as usize).collect(),
        payload_len,
    };
    let needed = header
        .header_len()
        .checked_add(payload_len)
        .ok_or_else(|| Error::IdxDimensionOverflow(raw.clone()))?;
    if bytes.len() < needed {
        return Err(Error::IdxTruncated {
            expected: needed,
            actual: bytes.len(),
        });
    }
    Ok(header)
}

/// Parses an uncompressed IDX image or label stream.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let header = parse_idx_header(bytes)?;
    let payload = &bytes[header.header_len()..header.header_len() + header.payload_len];
    match header.magic {
        MAGIC_LABELS => Ok(IdxData::Labels(
            payload.iter().map(|&b| b as usize).collect(),
        )),
        _ => {
            let (count, rows, cols) = (header.dims[0], header.dims[1], header.dims[2]);
            let plane = rows * cols;
            let images = (0..count)
                .map(|i| {
                    normalize_u8(&ImageU8 {
                        channels: 1,
                        height: rows,
                        width: cols,
                        data: payload[i * plane..(i + 1) * plane].to_vec(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(IdxData::Images {
                dims: [count, rows, cols],
                images,
            })
        }
    }
}

/// Reads a file, transparently inflating gzip.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("neither {} nor {} exists", plain.display(), gz.display()),
    )))
}

/// Loads `{split}-images-idx3-ubyte[.gz]` and `{split}-labels-idx1-ubyte[.gz]`
/// from `dir`, where `split` is `train` or `t10k`.
pub fn load_mnist(dir: &Path, split: &str) -> Result<Dataset> {
    let images = parse_idx(&read_maybe_gzip(&locate(
        dir,
        &format!("{split}-images-idx3-ubyte"),
    )?)?)?;
    let labels = parse_idx(&read_maybe_gzip(&locate(
        dir,
        &format!("{split}-labels-idx1-ubyte"),
    )?)?)?;
    match (images, labels) {
        (IdxData::Images { images, .. }, IdxData::Labels(labels)) => {
            if images.len() != labels.len() {
                return Err(Error::Shape(format!(
                    "{} images but {} labels in {split}",
                    images.len(),
                    labels.len()
                )));
            }
            Dataset::new(
                format!("mnist-{split}"),
                10,
                Batch::new(images, Some(labels))?,
            )
        }
        _ => Err(Error::Shape(format!(
            "{split} image/label files have swapped formats"
        ))),
    }
}

/// Serializes 8-bit data as IDX.
pub fn encode_idx(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}
