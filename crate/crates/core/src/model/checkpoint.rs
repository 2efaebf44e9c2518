//! Single-file parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "STRCKPT\0"
//! 4 bytes   manifest length N (u32)
//! N bytes   UTF-8 JSON manifest {"format_version", "kind", "config", "tensors": [{"name", "shape"}]}
//! rest      f64 values of every tensor, in manifest order, row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{ModelConfig, ModelKind, Parameters};

pub const MAGIC: &[u8; 8] = b"STRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: ModelKind,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            config: self.config.clone(),
            tensors: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.params.count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = bytes
            .get(12..12 + n)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let mut body = &bytes[12 + n..];
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for entry in manifest.tensors {
            let len: usize = entry.shape.iter().product();
            if body.len() < 8 * len {
                return Err(Error::Checkpoint(format!(
                    "truncated data for {}",
                    entry.name
                )));
            }
            let data = body[..8 * len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            body = &body[8 * len..];
            names.push(entry.name);
            tensors.push(Tensor::new(entry.shape, data));
        }
        if !body.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        let params = Parameters::from_parts(names, tensors)?;
        let expected = Parameters::init(&manifest.config, manifest.kind)?;
        let shapes_match = expected.names() == params.names()
            && expected
                .tensors()
                .iter()
                .zip(params.tensors())
                .all(|(a, b)| a.shape() == b.shape());
        if !shapes_match {
            return Err(bad("tensor layout does not match the stored model config"));
        }
        Ok(Self {
            kind: manifest.kind,
            config: manifest.config,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let config = ModelConfig::desk();
        let ckpt = Checkpoint {
            kind: ModelKind::Spectnt,
            params: Parameters::init(&config, ModelKind::Spectnt).unwrap(),
            config,
        };
        let bytes = ckpt.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);

        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let manifest: serde_json::Value = serde_json::from_slice(&bytes[12..12 + n]).unwrap();
        assert_eq!(manifest["format_version"], 1);
        assert_eq!(manifest["kind"], "spectnt");
        assert_eq!(manifest["tensors"][0]["name"], "resnet.stem.w");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let config = ModelConfig::miniature(4, 8);
        let ckpt = Checkpoint {
            kind: ModelKind::Instant,
            params: Parameters::init(&config, ModelKind::Instant).unwrap(),
            config,
        };
        let bytes = ckpt.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!garbage!").is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
