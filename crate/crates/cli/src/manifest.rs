use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: the exact argument vector, the resolved
/// parameters and digests of the inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    pub wall_clock_s: f64,
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputDigest { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

/// `out.csv` → `out.manifest.json`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    primary.with_extension("manifest.json")
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Inputs whose content changed since the manifest was written.
    pub fn stale_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut stale = Vec::new();
        for input in &self.inputs {
            if digest(&input.path)?.sha256 != input.sha256 {
                stale.push(input.path.clone());
            }
        }
        Ok(stale)
    }
}
