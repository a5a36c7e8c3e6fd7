//! Small binary array container shared by warp files and image datasets.
//!
//! Layout: 8 magic bytes, `u32` rank, `u32` extents, then little-endian
//! `f64` values in row-major order. Each grid point may carry several
//! values (a warp stores `D` coordinates per point); the per-point count
//! is implied by the payload length.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const WARP_MAGIC: &[u8; 8] = b"ICWARP01";
pub const IMAGES_MAGIC: &[u8; 8] = b"ICIMGS01";

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayFile {
    pub extents: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayFile {
    pub fn values_per_point(&self) -> usize {
        self.data.len() / self.extents.iter().product::<usize>().max(1)
    }

    pub fn encode(&self, magic: &[u8; 8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.extents.len() + 8 * self.data.len());
        out.extend_from_slice(magic);
        out.extend_from_slice(&(self.extents.len() as u32).to_le_bytes());
        for &e in &self.extents {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], magic: &[u8; 8], context: &str) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::format(context, bytes.len(), "truncated header"));
        }
        if &bytes[..8] != magic {
            return Err(Error::format(
                context,
                0,
                format!("bad magic, expected {}", String::from_utf8_lossy(magic)),
            ));
        }
        let rank = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header = 12 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::format(context, bytes.len(), "truncated extents"));
        }
        let extents: Vec<usize> = bytes[12..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        let points: usize = extents.iter().product();
        let payload = &bytes[header..];
        if points == 0 || payload.len() % 8 != 0 || (payload.len() / 8) % points != 0 || payload.is_empty() {
            return Err(Error::format(
                context,
                header,
                format!("payload of {} bytes does not fit extents {extents:?}", payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { extents, data })
    }

    pub fn write(&self, path: &Path, magic: &[u8; 8]) -> Result<()> {
        fs::write(path, self.encode(magic)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, magic: &[u8; 8]) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, magic, &path.display().to_string())
    }
}
