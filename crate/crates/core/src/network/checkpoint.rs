//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"UPLF"            magic
//! u32                format version (1)
//! u32 + bytes        JSON header: {"model": ModelConfig, "meta": any}
//! u32                tensor count
//! per tensor:
//!   u16 + bytes      UTF-8 name
//!   u8               dtype tag (1 = f64)
//!   u8               rank
//!   u64 * rank       dims
//!   f64 * prod(dims) values
//! [u8; 32]           SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::Uplifter;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UPLF";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Model configuration, weights and free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: &Uplifter, params: ParamStore) -> Self {
        Checkpoint {
            config: model.config().clone(),
            params,
            meta: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            model: self.config.clone(),
            meta: self.meta.clone(),
        })
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let layout = self.params.layout();
        out.extend_from_slice(&(layout.specs().len() as u32).to_le_bytes());
        for spec in layout.specs() {
            let name = spec.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(DTYPE_F64);
            out.push(spec.shape.len() as u8);
            for &d in &spec.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &self.params.data()[spec.offset..spec.offset + spec.len()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 32 {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum("checkpoint".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let model = Uplifter::new(header.model.clone())?;
        let layout = model.layout().clone();
        let count = r.u32()? as usize;
        if count != layout.specs().len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} tensors, model expects {}",
                layout.specs().len()
            )));
        }
        let mut params = ParamStore::zeros(layout.clone());
        for spec in layout.specs() {
            let nlen = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            if name != spec.name {
                return Err(Error::Format(format!(
                    "tensor {name} found where {} was expected",
                    spec.name
                )));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(Error::Format(format!("{name}: unknown dtype tag {dtype}")));
            }
            let rank = r.u8()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if dims != spec.shape {
                return Err(Error::Format(format!(
                    "{name}: shape {dims:?}, expected {:?}",
                    spec.shape
                )));
            }
            let dst = &mut params.data_mut()[spec.offset..spec.offset + spec.len()];
            for v in dst {
                *v = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes after tensors".into()));
        }
        Ok(Checkpoint {
            config: header.model,
            params,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Rebuild the model described by the stored configuration.
    pub fn model(&self) -> Result<Uplifter> {
        Uplifter::new(self.config.clone())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
