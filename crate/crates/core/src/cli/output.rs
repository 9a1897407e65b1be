use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// SHA-256 of `config.json` as written next to the manifest.
    pub config_hash: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
    pub seed: u64,
    pub command: String,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()) {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Runtime(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

pub struct Run {
    dir: PathBuf,
}

impl Run {
    /// Creates the output directory and writes the config and manifest
    /// before any result.
    /// Results go to `<output_dir>/<command>/`.
    pub fn start(cfg: &ExperimentConfig, command: &str, outputs: &[String]) -> Result<Self, CliError> {
        let dir = cfg.output_dir.join(command);
        fs::create_dir_all(&dir)
            .map_err(|e| CliError::Runtime(format!("creating {}: {e}", dir.display())))?;
        let config = cfg.canonical_json();
        write_atomic(&dir.join(CONFIG_FILE), &config)?;
        let manifest = RunManifest {
            config_hash: sha256_hex(&config),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: timestamp(),
            seed: cfg.seed,
            command: command.into(),
            outputs: outputs.to_vec(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        bytes.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &bytes)?;
        Ok(Run { dir })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), bytes)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Runtime(format!("serializing {name}: {e}")))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}
