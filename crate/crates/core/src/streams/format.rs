//! On-disk skeleton sequences and dataset manifests.
//!
//! Sequence layout (integers little-endian):
//!
//! ```text
//! magic    8 bytes "TAGCNSEQ"
//! version  u32
//! C, T, N  u32 each
//! label    u32 (0xFFFF_FFFF when unlabeled)
//! name_len u32, topology name utf-8
//! payload  f32 * C*T*N, (C, T, N) row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Reader, Tensor};

pub const SEQUENCE_MAGIC: &[u8; 8] = b"TAGCNSEQ";
pub const SEQUENCE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

const NO_LABEL: u32 = u32::MAX;

/// Raw joint coordinates of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    /// `(C, T_raw, N)` coordinates.
    pub data: Tensor<f32>,
    pub topology: String,
    pub label: Option<usize>,
}

impl SkeletonSequence {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.topology.len() + 4 * self.data.numel());
        out.extend_from_slice(SEQUENCE_MAGIC);
        out.extend_from_slice(&SEQUENCE_VERSION.to_le_bytes());
        for &d in self.data.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let label = self.label.map_or(NO_LABEL, |l| l as u32);
        out.extend_from_slice(&label.to_le_bytes());
        out.extend_from_slice(&(self.topology.len() as u32).to_le_bytes());
        out.extend_from_slice(self.topology.as_bytes());
        for &v in self.data.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "sequence file");
        if r.take(8)? != SEQUENCE_MAGIC {
            return Err(Error::Format("not a sequence file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SEQUENCE_VERSION {
            return Err(Error::Format(format!("unsupported sequence version {version}")));
        }
        let (c, t, n) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if c == 0 || t == 0 || n == 0 {
            return Err(Error::Format(format!(
                "sequence extents ({c}, {t}, {n}) must be positive"
            )));
        }
        let label = match r.u32()? {
            NO_LABEL => None,
            l => Some(l as usize),
        };
        let len = r.u32()? as usize;
        let topology = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("topology name is not UTF-8".into()))?
            .to_string();
        let values = (0..c * t * n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        if !r.at_end() {
            return Err(Error::Format("trailing bytes after sequence payload".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sequence payload contains NaN or infinity".into()));
        }
        Ok(Self {
            data: Tensor::new(vec![c, t, n], values)?,
            topology,
            label,
        })
    }
}

pub fn write_sequence(path: impl AsRef<Path>, seq: &SkeletonSequence) -> Result<()> {
    fs::write(path.as_ref(), seq.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_sequence(path: impl AsRef<Path>) -> Result<SkeletonSequence> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    SkeletonSequence::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.as_ref().display())),
        other => other,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
}

/// Directory index: which file belongs to which split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub topology: String,
    pub num_classes: usize,
    pub channels: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads every sequence listed under `split`, in manifest order.
pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<(DatasetManifest, Vec<SkeletonSequence>)> {
    let manifest = load_manifest(&dir)?;
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        let path: PathBuf = dir.as_ref().join(&e.file);
        let seq = read_sequence(&path)?;
        if seq.topology != manifest.topology {
            return Err(Error::Format(format!(
                "{}: topology {} differs from manifest {}",
                path.display(),
                seq.topology,
                manifest.topology
            )));
        }
        if seq.data.shape()[0] != manifest.channels {
            return Err(Error::Format(format!(
                "{}: {} channels, manifest says {}",
                path.display(),
                seq.data.shape()[0],
                manifest.channels
            )));
        }
        match seq.label {
            Some(l) if l < manifest.num_classes => {}
            Some(l) => {
                return Err(Error::OutOfRange(format!(
                    "{}: label {l} with {} classes",
                    path.display(),
                    manifest.num_classes
                )))
            }
            None => {
                return Err(Error::Format(format!(
                    "{}: unlabeled sequence in a dataset",
                    path.display()
                )))
            }
        }
        out.push(seq);
    }
    Ok((manifest, out))
}
