//! One `run_manifest.json` per output directory, recording what produced it.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective configuration after defaults, config file and flags.
    pub config: Value,
    pub seed: u64,
    /// Hash over the configuration and the bytes of every input file.
    pub input_hash: String,
    pub inputs: Vec<PathBuf>,
    pub started_utc: String,
    pub finished_utc: String,
    /// Primary outputs, relative to the directory holding the manifest.
    pub outputs: Vec<PathBuf>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Git-style object hash: the content is prefixed with `blob <len>\0`.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex(&h.finalize())
}

/// Hash of the configuration followed by each input's blob hash, in order.
pub fn input_hash(config: &Value, inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(blob_hash(serde_json::to_string(config)?.as_bytes()).as_bytes());
    for path in inputs {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        h.update(blob_hash(&bytes).as_bytes());
    }
    Ok(hex(&h.finalize()))
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects the pieces of a manifest while a command runs.
pub struct ManifestBuilder {
    command: String,
    config: Value,
    seed: u64,
    inputs: Vec<PathBuf>,
    started: DateTime<Utc>,
}

impl ManifestBuilder {
    pub fn start(
        command: &str,
        config: &impl Serialize,
        seed: u64,
        inputs: Vec<PathBuf>,
    ) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            inputs,
            started: Utc::now(),
        })
    }

    /// Writes the manifest into `dir`.
    pub fn finish(self, dir: &Path, outputs: Vec<PathBuf>) -> Result<RunManifest> {
        let manifest = RunManifest {
            input_hash: input_hash(&self.config, &self.inputs)?,
            command: self.command,
            config: self.config,
            seed: self.seed,
            inputs: self.inputs,
            started_utc: stamp(self.started),
            finished_utc: stamp(Utc::now()),
            outputs,
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn read(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git_framing() {
        // sha256 of "blob 0\0", as `git hash-object --object-format=sha256` prints for an empty file
        assert_eq!(
            blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn input_hash_tracks_config_and_content() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        fs::write(&f, "one").unwrap();
        let cfg = serde_json::json!({"x": 1});
        let a = input_hash(&cfg, std::slice::from_ref(&f)).unwrap();
        assert_eq!(a, input_hash(&cfg, std::slice::from_ref(&f)).unwrap());
        assert_ne!(
            a,
            input_hash(&serde_json::json!({"x": 2}), std::slice::from_ref(&f)).unwrap()
        );
        fs::write(&f, "two").unwrap();
        assert_ne!(a, input_hash(&cfg, &[f]).unwrap());
    }
}
