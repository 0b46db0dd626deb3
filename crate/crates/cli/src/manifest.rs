//! Reproducibility manifest written alongside every command output.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Records what a command ran with: the resolved configuration (defaults
/// included), the digests of every input file and the paths written. No
/// timestamps, so deterministic commands emit identical manifests.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    /// Input path -> sha256 of the file content.
    pub inputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config,
            inputs: BTreeMap::new(),
            seed: None,
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_sha256(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        fs::write(path, body + "\n")
            .with_context(|| format!("writing manifest {}", path.display()))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
