//! Per-directory reproducibility manifests.
//!
//! The content hash covers the stage name, tool version, seed, config
//! snapshot and the sha256 of every input and output file. File keys are bare
//! names, so the same run in another directory hashes identically. Wall time
//! is recorded but not hashed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_error, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Hashes files keyed as `<role>/<file name>`.
pub fn hash_files<'a>(
    role: &str,
    paths: impl IntoIterator<Item = &'a PathBuf>,
) -> Result<BTreeMap<String, String>, CliError> {
    paths
        .into_iter()
        .map(|p| Ok((format!("{role}/{}", file_key(p)), hash_file(p)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub content_hash: String,
    pub wall_time_secs: f64,
}

/// What a stage is about to consume; compared against an existing manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct StageKey {
    pub stage: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(key: StageKey, outputs: BTreeMap<String, String>, wall_time_secs: f64) -> Self {
        let mut m = Self {
            stage: key.stage,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: key.seed,
            config: key.config,
            inputs: key.inputs,
            outputs,
            content_hash: String::new(),
            wall_time_secs,
        };
        m.content_hash = m.compute_hash();
        m
    }

    pub fn compute_hash(&self) -> String {
        let hashed = serde_json::json!({
            "stage": self.stage,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        sha256_hex(hashed.to_string().as_bytes())
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = Self::path(dir);
        let tmp = dir.join(format!(".{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&tmp, text).map_err(|e| io_error(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_error(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = Self::path(dir);
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::User(format!("{}: malformed manifest: {e}", path.display())))
    }

    /// True when `dir` holds a manifest for `key` whose outputs are all
    /// present with unchanged content.
    pub fn is_current(dir: &Path, key: &StageKey) -> bool {
        let Ok(m) = Self::read(dir) else {
            return false;
        };
        if m.stage != key.stage
            || m.seed != key.seed
            || m.config != key.config
            || m.inputs != key.inputs
            || m.tool_version != env!("CARGO_PKG_VERSION")
            || m.content_hash != m.compute_hash()
        {
            return false;
        }
        m.outputs.iter().all(|(name, hash)| {
            let file = name.rsplit('/').next().unwrap_or(name);
            hash_file(&dir.join(file)).is_ok_and(|h| &h == hash)
        })
    }
}
