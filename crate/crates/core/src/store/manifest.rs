use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::StoreError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

/// Record of one run: configuration, seeds and a digest of every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, StoreError> {
    let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Hash `dir/rel` and list it.
    pub fn add_output(&mut self, dir: &Path, rel: &str) -> Result<(), StoreError> {
        let sha256 = sha256_file(&dir.join(rel))?;
        self.outputs.retain(|o| o.path != rel);
        self.outputs.push(OutputDigest {
            path: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), StoreError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| StoreError::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| StoreError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| StoreError::BadRecord {
            path,
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Re-hash every listed output.
    pub fn verify(&self, dir: &Path) -> Result<(), StoreError> {
        for o in &self.outputs {
            if sha256_file(&dir.join(&o.path))? != o.sha256 {
                return Err(StoreError::DigestMismatch(o.path.clone()));
            }
        }
        Ok(())
    }
}
