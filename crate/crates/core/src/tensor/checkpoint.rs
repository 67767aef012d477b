//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "TAGCNCKP"
//! version u32
//! count   u32
//! entry*  { name_len u32, name utf-8, rank u32, extents u64 * rank, values f64 * prod(extents) }
//! ```

use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TAGCNCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub extents: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    /// Snapshot of every parameter and buffer in the store.
    pub fn from_store<S: Scalar>(store: &ParamStore<S>) -> Self {
        let entry = |name: &str, t: &Tensor<S>| CheckpointEntry {
            name: name.to_string(),
            extents: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.as_f64()).collect(),
        };
        let mut entries: Vec<_> = store.iter().map(|p| entry(&p.name, &p.value)).collect();
        entries.extend(store.buffers().map(|(n, t)| entry(n, t)));
        Self { entries }
    }

    /// Writes every entry back into the store; names and shapes must match
    /// exactly and every store tensor must be covered.
    pub fn restore<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        let lookup = |name: &str, shape: &[usize]| -> Result<&CheckpointEntry> {
            let e = self
                .entries
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint has no entry {name}")))?;
            if e.extents != shape {
                return Err(Error::Format(format!(
                    "checkpoint entry {name} has extents {:?}, model expects {shape:?}",
                    e.extents
                )));
            }
            Ok(e)
        };
        for p in store.iter_mut() {
            let e = lookup(&p.name, p.value.shape())?;
            for (d, &v) in p.value.data_mut().iter_mut().zip(&e.values) {
                *d = S::lit(v);
            }
        }
        for (name, t) in store.buffers_mut() {
            let e = lookup(name, t.shape())?;
            for (d, &v) in t.data_mut().iter_mut().zip(&e.values) {
                *d = S::lit(v);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.extents.len() as u32).to_le_bytes());
            for &d in &e.extents {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let extents = (0..rank)
                .map(|_| r.u64().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = extents.iter().product();
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            entries.push(CheckpointEntry { name, extents, values });
        }
        if !r.at_end() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated {}", self.what)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
