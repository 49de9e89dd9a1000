//! Portable weights bundle.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "NNXW" | u32 version = 1 | u32 tensor_count
//! per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 extents[rank] | f32 values
//! u32 config_len | config (UTF-8 key=value lines)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Model, ModelConfig, NnxError, Tensor};

pub const MAGIC: &[u8; 4] = b"NNXW";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model) -> Vec<u8> {
    let params = model.named_parameters();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.rank() as u8);
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let config = model.config().to_text();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnxError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NnxError::Truncated(format!("{what} at byte {}", self.pos))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8, NnxError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, NnxError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, NnxError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str, NnxError> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| NnxError::BadConfig(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model, NnxError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(NnxError::BadMagic);
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(NnxError::VersionUnsupported(version));
    }
    let count = cur.u32("tensor count")?;
    let mut params = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = cur.utf8(name_len, "tensor name")?.to_string();
        let rank = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| NnxError::Truncated(format!("tensor {name} is impossibly large")))?;
        let raw = cur.take(numel, "tensor values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data)?;
        if params.insert(name.clone(), tensor).is_some() {
            return Err(NnxError::DuplicateTensor(name));
        }
    }
    let config_len = cur.u32("config length")? as usize;
    let config = ModelConfig::from_text(cur.utf8(config_len, "config block")?)?;
    if cur.pos != bytes.len() {
        return Err(NnxError::TrailingBytes(bytes.len() - cur.pos));
    }
    Model::from_parameters(config, params)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<(), NnxError> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model, NnxError> {
    decode(&fs::read(path)?)
}
