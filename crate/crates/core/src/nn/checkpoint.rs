//! Binary tensor container.
//!
//! Layout (little-endian): magic `UNRG`, `u32` version, `u32` entry count, then per
//! entry a `u32` name length, the UTF-8 name, a `u32` rank, `rank` `u64` dimensions and
//! the `f64` payload; finally a CRC32 of every preceding byte.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::{Activation, Dense, Mlp, MlpSpec, OutputActivation};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"UNRG";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing entry {0:?}")]
    MissingEntry(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn scalar(x: f64) -> Self {
        Self {
            dims: vec![],
            data: vec![x],
        }
    }

    pub fn vector(v: &[f64]) -> Self {
        Self {
            dims: vec![v.len() as u64],
            data: v.to_vec(),
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            dims: vec![rows as u64, cols as u64],
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named tensors, serialized in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Tensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.entries
            .get(name)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        let t = self.get(name)?;
        match t.data.as_slice() {
            [x] => Ok(*x),
            _ => Err(CheckpointError::Malformed(format!("{name} is not a scalar"))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<&[f64], CheckpointError> {
        Ok(&self.get(name)?.data)
    }

    /// Stores `net` under `<prefix>/spec`, `<prefix>/w<i>` and `<prefix>/b<i>`.
    pub fn insert_mlp(&mut self, prefix: &str, net: &Mlp) {
        let spec = net.spec();
        let mut header = vec![spec.hidden.code(), spec.output.code()];
        header.extend(spec.widths.iter().map(|&w| w as f64));
        self.insert(format!("{prefix}/spec"), Tensor::vector(&header));
        for (i, l) in net.layers().iter().enumerate() {
            self.insert(
                format!("{prefix}/w{i}"),
                Tensor::matrix(l.outputs, l.inputs, l.weight.clone()),
            );
            self.insert(format!("{prefix}/b{i}"), Tensor::vector(&l.bias));
        }
    }

    pub fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let header = self.vector(&format!("{prefix}/spec"))?;
        let malformed = || CheckpointError::Malformed(format!("bad network header for {prefix}"));
        if header.len() < 4 {
            return Err(malformed().into());
        }
        let hidden = Activation::from_code(header[0]).ok_or_else(malformed)?;
        let output = OutputActivation::from_code(header[1]).ok_or_else(malformed)?;
        let widths: Vec<usize> = header[2..].iter().map(|&w| w as usize).collect();
        let spec = MlpSpec::new(widths.clone(), hidden, output)?;
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            let weight = self.get(&format!("{prefix}/w{i}"))?;
            let bias = self.get(&format!("{prefix}/b{i}"))?;
            layers.push(Dense {
                inputs: w[0],
                outputs: w[1],
                weight: weight.data.clone(),
                bias: bias.data.clone(),
            });
        }
        Mlp::from_layers(spec, layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_version(FORMAT_VERSION)
    }

    pub(crate) fn to_bytes_with_version(&self, version: u32) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&version.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                CheckpointError::BadMagic
            } else {
                CheckpointError::Truncated
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let body = &bytes[..bytes.len() - 4];
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let count = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Malformed("entry name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(r.u64()?);
            }
            let n = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated)? as usize;
            let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.insert(name, Tensor { dims, data });
        }
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if r.pos != body.len() || stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some((name, _)) = self
            .entries
            .iter()
            .find(|(_, t)| t.data.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite(format!("checkpoint entry {name}")));
        }
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

/// Networks and plain vectors stored side by side (`net/<name>/...`, `vec/<name>`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedCollection {
    pub nets: BTreeMap<String, Mlp>,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl NamedCollection {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (name, net) in &self.nets {
            ck.insert_mlp(&format!("net/{name}"), net);
        }
        for (name, v) in &self.vectors {
            ck.insert(format!("vec/{name}"), Tensor::vector(v));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut out = Self::default();
        for name in ck.names() {
            if let Some(rest) = name.strip_prefix("net/") {
                if let Some(net_name) = rest.strip_suffix("/spec") {
                    out.nets
                        .insert(net_name.to_string(), ck.mlp(&format!("net/{net_name}"))?);
                }
            } else if let Some(v) = name.strip_prefix("vec/") {
                out.vectors.insert(v.to_string(), ck.vector(name)?.to_vec());
            }
        }
        Ok(out)
    }
}

pub fn save_checkpoint(collection: &NamedCollection, path: impl AsRef<Path>) -> Result<()> {
    collection.to_checkpoint().save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NamedCollection> {
    NamedCollection::from_checkpoint(&Checkpoint::load(path)?)
}
