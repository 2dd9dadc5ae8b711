//! Run manifests: a JSON record of what a command read, wrote, and spent.
//!
//! Every pipeline command writes one manifest next to its main output so
//! a finished run can be audited and a rerun can be checked for
//! byte-identical results. Manifests carry no timestamps or host details:
//! two identical runs produce identical manifests. All maps are ordered,
//! so serialization is deterministic.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{Gateway, UsageRecord};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode manifest {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// One command's audit record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    /// The subcommand that produced this manifest.
    pub command: String,
    /// sha256 of the configuration file; empty when defaults were used.
    pub config_digest: String,
    /// Seeds that influenced randomized steps, keyed by role.
    pub seeds: BTreeMap<String, u64>,
    /// Scalar facts about the run (counts, thresholds, flags).
    pub facts: BTreeMap<String, String>,
    /// sha256 by path for every data file read.
    pub inputs: BTreeMap<String, String>,
    /// sha256 by path for every file written.
    pub outputs: BTreeMap<String, String>,
    /// Gateway totals for the run (zeros for offline commands).
    pub usage: UsageRecord,
    /// Per-model breakdown of `usage`.
    pub usage_by_model: BTreeMap<String, UsageRecord>,
}

/// Hex sha256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String, ManifestError> {
    let io_err = |e: std::io::Error| ManifestError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut file = fs::File::open(path).map_err(io_err)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Where a command's manifest lives: the main output path plus a
/// `.manifest.json` suffix.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_os_string();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl Manifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            ..Default::default()
        }
    }

    /// Digest the configuration file backing this run, if any.
    pub fn record_config(&mut self, path: Option<&Path>) -> Result<(), ManifestError> {
        if let Some(path) = path {
            self.config_digest = sha256_file(path)?;
        }
        Ok(())
    }

    pub fn record_seed(&mut self, role: impl Into<String>, seed: u64) {
        self.seeds.insert(role.into(), seed);
    }

    pub fn record_fact(&mut self, name: impl Into<String>, value: impl Display) {
        self.facts.insert(name.into(), value.to_string());
    }

    pub fn record_input(&mut self, path: &Path) -> Result<(), ManifestError> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Digest a file this command wrote; call after the write.
    pub fn record_output(&mut self, path: &Path) -> Result<(), ManifestError> {
        let digest = sha256_file(path)?;
        self.outputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn record_usage(&mut self, gateway: &Gateway) {
        self.usage = gateway.usage_report();
        self.usage_by_model = gateway.usage_by_model();
    }

    /// Serialize to pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        fs::write(path, self.to_json()).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|e| ManifestError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ManifestError::Json {
            path: path.display().to_string(),
            source: e,
        })
    }
}
