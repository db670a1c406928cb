//! Run manifests and the seed tree: every random stream in a run is derived
//! from the manifest's master seed, so re-running a manifest reproduces all
//! outputs bit-for-bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Derive a child seed from a master seed and a stream label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Hash of a resolved-config JSON value, as stored in policy files and
/// trace headers.
pub fn config_hash(resolved: &serde_json::Value) -> [u8; 32] {
    let bytes = serde_json::to_vec(resolved).expect("config serializes");
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub created_utc: String,
    /// The command and arguments that produced this run.
    pub command: String,
    pub master_seed: u64,
    /// Named seeds derived from the master for each component stream.
    pub derived_seeds: BTreeMap<String, u64>,
    /// Fully resolved configuration snapshot (defaults < file < flags).
    pub resolved_config: serde_json::Value,
    pub config_hash: String,
    /// Paths of every artifact this run wrote, relative to the output dir.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: String, master_seed: u64, resolved_config: serde_json::Value) -> Self {
        let hash = hex(&config_hash(&resolved_config));
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_utc: chrono::Utc::now().to_rfc3339(),
            command,
            master_seed,
            derived_seeds: BTreeMap::new(),
            resolved_config,
            config_hash: hash,
            artifacts: Vec::new(),
        }
    }

    pub fn record_seed(&mut self, label: &str) -> u64 {
        let seed = derive_seed(self.master_seed, label);
        self.derived_seeds.insert(label.to_string(), seed);
        seed
    }

    pub fn add_artifact(&mut self, path: impl Into<String>) {
        self.artifacts.push(path.into());
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Write via a temp file and rename so readers never see partial content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
