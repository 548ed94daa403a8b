use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything needed to rerun a command: its arguments, the effective
/// configuration after flag overrides, the seeds, and digests of what it
/// read and wrote. Deliberately free of timestamps so that identical runs
/// produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Derived values worth recording, such as the resolved KL threshold.
    #[serde(default)]
    pub derived: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv: argv.to_vec(),
            config: serde_json::to_value(config).map_err(|e| CliError::usage(e.to_string()))?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            derived: BTreeMap::new(),
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn derived(&mut self, name: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.derived.insert(name.to_string(), v);
    }

    /// Writes `<dir>/<command>.manifest.json` and returns its path.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        self.write_named(dir, &self.command)
    }

    /// Writes `<dir>/<stem>.manifest.json`, for commands that may run
    /// several times into one directory.
    pub fn write_named(&self, dir: &Path, stem: &str) -> CliResult<PathBuf> {
        let path = dir.join(format!("{stem}.manifest.json"));
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::usage(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}
