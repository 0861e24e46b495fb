//! `PNNW1` container: magic line, one-line JSON manifest, then little-endian
//! f32 blobs in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &str = "PNNW1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    /// Byte length (4 per element).
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    /// `"weights"` or `"adam-state"`.
    pub kind: String,
    pub arch: String,
    pub variant: String,
    #[serde(rename = "K")]
    pub layers: usize,
    #[serde(rename = "J")]
    pub features: usize,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "box")]
    pub bounds: [f64; 2],
    pub a: f64,
    #[serde(default)]
    pub norm_shape: Option<[usize; 2]>,
    /// Scalar values (f32-representable), stored inline.
    #[serde(default)]
    pub scalars: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
}

impl WeightsManifest {
    pub fn new(
        kind: &str,
        arch: &str,
        variant: &str,
        layers: usize,
        features: usize,
        channels: usize,
    ) -> Self {
        WeightsManifest {
            kind: kind.into(),
            arch: arch.into(),
            variant: variant.into(),
            layers,
            features,
            channels,
            bounds: [0.0, 1.0],
            a: 3.0,
            norm_shape: None,
            scalars: BTreeMap::new(),
            step: 0,
            tensors: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightsFile {
    pub manifest: WeightsManifest,
    blobs: Vec<Vec<f32>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(format!("weights: {}", msg.into()))
}

impl WeightsFile {
    /// Starts an empty container; any tensor directory in `manifest` is
    /// discarded and rebuilt by [`WeightsFile::push`].
    pub fn new(mut manifest: WeightsManifest) -> Self {
        manifest.tensors.clear();
        WeightsFile {
            manifest,
            blobs: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {shape:?} vs {} values",
                data.len()
            )));
        }
        if self.manifest.tensors.iter().any(|t| t.name == name) {
            return Err(bad(format!("duplicate tensor {name}")));
        }
        let offset = self
            .manifest
            .tensors
            .last()
            .map_or(0, |t| t.offset + t.length);
        self.manifest.tensors.push(TensorEntry {
            name,
            shape,
            offset,
            length: 4 * data.len() as u64,
        });
        self.blobs.push(data);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<(&TensorEntry, &[f32])> {
        let i = self.manifest.tensors.iter().position(|t| t.name == name)?;
        Some((&self.manifest.tensors[i], &self.blobs[i]))
    }

    /// Looks up a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&[f32]> {
        let (entry, data) = self
            .tensor(name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if entry.shape != shape {
            return Err(bad(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                entry.shape
            )));
        }
        Ok(data)
    }

    pub fn payload_len(&self) -> u64 {
        self.manifest.tensors.iter().map(|t| t.length).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_string(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(json.len() + 8 + self.payload_len() as usize);
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(json.as_bytes());
        out.push(b'\n');
        for blob in &self.blobs {
            for v in blob {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC.as_bytes())
            .and_then(|r| r.strip_prefix(b"\n"))
            .ok_or_else(|| bad("corrupted magic"))?;
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated manifest"))?;
        let manifest: WeightsManifest =
            serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("manifest: {e}")))?;
        let payload = &rest[nl + 1..];
        let mut blobs = Vec::with_capacity(manifest.tensors.len());
        let mut expected_offset = 0u64;
        for t in &manifest.tensors {
            let count = t
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad(format!("tensor {} shape overflows", t.name)))?;
            if t.offset != expected_offset {
                return Err(bad(format!(
                    "tensor {} at offset {} (expected {expected_offset})",
                    t.name, t.offset
                )));
            }
            if t.length != 4 * count as u64 {
                return Err(bad(format!(
                    "tensor {} declares {} bytes for shape {:?}",
                    t.name, t.length, t.shape
                )));
            }
            let end = t.offset + t.length;
            if end > payload.len() as u64 {
                return Err(bad(format!(
                    "tensor {} truncated: needs bytes {}..{end}, payload has {}",
                    t.name,
                    t.offset,
                    payload.len()
                )));
            }
            let raw = &payload[t.offset as usize..end as usize];
            blobs.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
            expected_offset = end;
        }
        if expected_offset != payload.len() as u64 {
            return Err(bad(format!(
                "payload has {} bytes, directory covers {expected_offset}",
                payload.len()
            )));
        }
        Ok(WeightsFile { manifest, blobs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
