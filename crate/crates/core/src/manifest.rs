//! Run manifests: what a command read and wrote, with digests, so a run can
//! be replayed and checked.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{file_digest, read_json, sha256_hex, write_json_pretty};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    /// The subcommand and its arguments, as the CLI serialized them.
    pub command: serde_json::Value,
    /// Effective configuration after defaults and overrides.
    pub config: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub exec: String,
    pub workers: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: serde_json::Value, config: String) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command,
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            seeds: BTreeMap::new(),
            exec: String::new(),
            workers: 0,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        add(&mut self.inputs, path)
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        add(&mut self.outputs, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let v: serde_json::Value = read_json(path)?;
        let version = v
            .get("manifest_version")
            .and_then(|x| x.as_u64())
            .unwrap_or(0) as u32;
        if version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "manifest",
                found: version,
                supported: MANIFEST_VERSION,
            });
        }
        serde_json::from_value(v)
            .map_err(|e| Error::format("manifest", format!("{}: {e}", path.display())))
    }

    /// Inputs must still have their recorded digests.
    pub fn check_inputs(&self) -> Result<()> {
        check(&self.inputs)
    }

    pub fn check_outputs(&self) -> Result<()> {
        check(&self.outputs)
    }
}

fn add(list: &mut Vec<FileDigest>, path: &Path) -> Result<()> {
    let sha256 = file_digest(path)?;
    list.retain(|f| f.path != path);
    list.push(FileDigest {
        path: path.to_path_buf(),
        sha256,
    });
    Ok(())
}

fn check(list: &[FileDigest]) -> Result<()> {
    for f in list {
        let found = file_digest(&f.path).unwrap_or_else(|_| "missing".into());
        if found != f.sha256 {
            return Err(Error::ReplayMismatch {
                path: f.path.display().to_string(),
                expected: f.sha256.clone(),
                found,
            });
        }
    }
    Ok(())
}
