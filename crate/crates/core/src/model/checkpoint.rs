//! Checkpoint files (little-endian): magic `TSTC`, version `u32`, config text
//! (`u32` length + UTF-8), then every store entry in declaration order as
//! name length `u32`, name, rank `u32`, dims `u32 x rank`, `f64` data.

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::nn::{ParamId, ParamStore};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TSTC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(config_text: String, store: &ParamStore) -> Self {
        let entries = store
            .entries()
            .iter()
            .map(|e| CheckpointEntry { name: e.name.clone(), shape: e.value.shape().to_vec(), data: e.value.to_vec() })
            .collect();
        Self { config_text, entries }
    }

    /// Requires the same set of names with identical shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors, model has {}",
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let id: ParamId = store
                .find(&e.name)
                .ok_or_else(|| Error::Param(format!("model has no parameter named {}", e.name)))?;
            if store.get(id).shape() != e.shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{}: checkpoint shape {:?}, model shape {:?}",
                    e.name,
                    e.shape,
                    store.get(id).shape()
                )));
            }
            store.set(id, e.data.clone())?;
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &'static str| -> Result<&[u8], FormatError> {
            let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(FormatError::Truncated(what))?;
            let s = &bytes[pos..end];
            pos = end;
            Ok(s)
        };
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("four bytes"));

        let magic: [u8; 4] = take(4, "magic")?.try_into().expect("four bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic { expected: CHECKPOINT_MAGIC, found: magic }.into());
        }
        let version = u32_of(take(4, "version")?);
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::Version { expected: CHECKPOINT_VERSION, found: version }.into());
        }
        let len = u32_of(take(4, "config length")?) as usize;
        let config_text = String::from_utf8(take(len, "config text")?.to_vec())
            .map_err(|e| FormatError::Malformed(format!("config text is not UTF-8: {e}")))?;
        let mut entries = Vec::new();
        while let Ok(len) = take(4, "entry name length") {
            let len = u32_of(len) as usize;
            let name = String::from_utf8(take(len, "entry name")?.to_vec())
                .map_err(|e| FormatError::Malformed(format!("parameter name is not UTF-8: {e}")))?;
            let rank = u32_of(take(4, "entry rank")?) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_of(take(4, "entry dims")?) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(n.checked_mul(8).ok_or(FormatError::Truncated("entry data"))?, "entry data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            entries.push(CheckpointEntry { name, shape, data });
        }
        // A partial name-length field is the only way the loop above can end early.
        if pos != bytes.len() {
            return Err(FormatError::Truncated("entry name length").into());
        }
        Ok(Self { config_text, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}
