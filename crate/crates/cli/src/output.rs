//! In-memory artifacts, the run directory and its manifest.
//!
//! Commands build every artifact in memory first. Nothing touches the
//! disk until the whole run has succeeded.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";

#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    /// Adds the output of a writer-based exporter.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> mrf_core::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn digests(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(n, b)| (n.clone(), sha256_hex(b)))
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    /// Resolved configuration (TOML text).
    pub config: String,
    pub versions: BTreeMap<String, String>,
    /// Input files and their digests.
    pub inputs: BTreeMap<String, String>,
    /// Artifact names and their digests.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        seed: u64,
        config: String,
        inputs: BTreeMap<String, String>,
        artifacts: &Artifacts,
    ) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("mrf-cli".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("mrf-core".into(), mrf_core::VERSION.into());
        Manifest {
            command: command.into(),
            seed,
            config_sha256: sha256_hex(config.as_bytes()),
            config,
            versions,
            inputs,
            artifacts: artifacts.digests(),
        }
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read manifest `{}`", path.display()))?;
        serde_json::from_str(&text).map_err(|e| {
            crate::config::config_err(format!("invalid manifest `{}`: {e}", path.display()))
        })
    }
}

/// Writes the artifacts, the resolved config and the manifest into `dir`.
pub fn write_run(dir: &Path, artifacts: &Artifacts, manifest: &Manifest) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create run directory `{}`", dir.display()))?;
    for (name, bytes) in &artifacts.files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("cannot write `{}`", path.display()))?;
    }
    std::fs::write(dir.join(CONFIG), &manifest.config)?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    std::fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}
