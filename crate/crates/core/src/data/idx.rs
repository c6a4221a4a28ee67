use std::path::Path;

use crate::error::{Error, Result};

/// Magic for unsigned-byte image files with three dimensions.
pub const IMAGE_MAGIC: u32 = 0x0000_0803;
/// Magic for unsigned-byte label files with one dimension.
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// An unsigned-byte IDX array: big-endian magic, big-endian `u32` extents, then the payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Format("IDX file shorter than its magic number".into()));
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            return Err(Error::Format(format!("IDX magic must start with two zero bytes, got {:02x?}", &bytes[..2])));
        }
        if bytes[2] != 0x08 {
            return Err(Error::Format(format!("only unsigned-byte IDX data is supported, type code {:#04x}", bytes[2])));
        }
        let rank = bytes[3] as usize;
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::Format("truncated IDX header".into()));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let len: usize = dims.iter().product();
        let payload = &bytes[header..];
        if payload.len() < len {
            return Err(Error::Format(format!("truncated IDX payload: {} of {len} bytes", payload.len())));
        }
        if payload.len() > len {
            return Err(Error::Format(format!("{} trailing bytes after IDX payload", payload.len() - len)));
        }
        Ok(IdxArray { dims, data: payload.to_vec() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }

    pub fn read(path: impl AsRef<Path>, expected_magic: u32) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        if bytes.len() >= 4 {
            let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
            if magic != expected_magic {
                return Err(Error::Format(format!(
                    "{}: magic {magic} where {expected_magic} was expected",
                    path.display()
                )));
            }
        }
        Self::parse(&bytes)
    }
}
