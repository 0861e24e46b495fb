use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One entry of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub clean: String,
    pub sigma: f64,
    pub seed: u64,
}

/// Parses `[{"clean": path, "sigma": s, "seed": n}, ...]`.
pub fn parse_dataset_manifest(text: &str) -> Result<Vec<DatasetEntry>> {
    let entries: Vec<DatasetEntry> =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("dataset manifest: {e}")))?;
    for (i, e) in entries.iter().enumerate() {
        if !(e.sigma >= 0.0 && e.sigma.is_finite()) {
            return Err(Error::Format(format!(
                "dataset manifest entry {i}: sigma {}",
                e.sigma
            )));
        }
        if e.clean.is_empty() {
            return Err(Error::Format(format!(
                "dataset manifest entry {i}: empty path"
            )));
        }
    }
    Ok(entries)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to re-run a command bit-exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Fully resolved configuration (defaults filled in).
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv,
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
        }
    }

    /// Hashes a file and records it; directories are hashed over their
    /// sorted entries' names and contents.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let digest = if path.is_dir() {
            let mut names: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            names.sort();
            let mut h = Sha256::new();
            for p in names {
                h.update(
                    p.file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                );
                h.update(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
            }
            hex::encode(h.finalize())
        } else {
            sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
        };
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("run manifest: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
