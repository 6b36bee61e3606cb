//! Atomic file output and run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON form of `value` (object keys sorted,
/// no insignificant whitespace).
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    // `serde_json::Value` keeps object keys in a sorted map.
    let canonical = serde_json::to_vec(&serde_json::to_value(value)?)?;
    Ok(format!("{:x}", Sha256::digest(&canonical)))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub tool_version: String,
    pub seed: u64,
    pub timestamp: String,
    pub passed: bool,
    pub files: Vec<String>,
}

/// Collects the files of one run and writes them atomically into `dir`.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunOutput {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes `bytes` to a temporary file next to the target, then renames it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `<command>.manifest.json` listing every file written so far.
    pub fn finish<T: Serialize>(
        mut self,
        command: &str,
        config: &T,
        seed: u64,
        passed: bool,
    ) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            timestamp: chrono::Utc::now().to_rfc3339(),
            passed,
            files: self.files.clone(),
        };
        let name = format!("{command}.manifest.json");
        let path = self.write_json(&name, &manifest)?;
        Ok(path)
    }
}
