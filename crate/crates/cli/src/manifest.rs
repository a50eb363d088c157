//! The run manifest: one JSON file per output directory that records every
//! artifact a command produced, keyed by variant and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    /// Relative to the output directory.
    pub path: String,
    pub average_accuracy: f64,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunEntry {
    pub seed: u64,
    pub weights: String,
    pub history: String,
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub skip_hyperconnections: usize,
    pub parameters: usize,
    /// Command-line overrides of config values used for this run.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, String>,
    #[serde(default)]
    pub reports: BTreeMap<String, ReportEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// Variant name, then seed.
    pub runs: BTreeMap<String, BTreeMap<u64, RunEntry>>,
}

impl RunManifest {
    pub fn new(name: &str, config_hash: &str) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("fogguard".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Self { name: name.to_string(), config_hash: config_hash.to_string(), versions, ..Default::default() }
    }

    /// The manifest in `dir`, or a fresh one. An existing manifest from a
    /// different config is an error rather than something to mix into.
    pub fn open(dir: &Path, name: &str, config_hash: &str) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(name, config_hash));
        }
        let m = Self::read(dir)?;
        if m.config_hash != config_hash {
            return Err(CliError::config(format!(
                "{} belongs to config {}, not {config_hash}; choose another output directory",
                path.display(),
                m.config_hash
            )));
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn write(&mut self, dir: &Path) -> CliResult<()> {
        let mut seeds: Vec<u64> = self.runs.values().flat_map(|r| r.keys().copied()).collect();
        seeds.sort_unstable();
        seeds.dedup();
        self.seeds = seeds;
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::other(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn entry(&self, variant: &str, seed: u64) -> CliResult<&RunEntry> {
        self.runs.get(variant).and_then(|r| r.get(&seed)).ok_or_else(|| {
            CliError::config(format!("no trained {variant} model for seed {seed}; run `fogguard train` first"))
        })
    }

    pub fn entry_mut(&mut self, variant: &str, seed: u64) -> CliResult<&mut RunEntry> {
        self.runs.get_mut(variant).and_then(|r| r.get_mut(&seed)).ok_or_else(|| {
            CliError::config(format!("no trained {variant} model for seed {seed}; run `fogguard train` first"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_guards_the_config_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("x", "aaa");
        m.runs.entry("vanilla".into()).or_default().insert(2, RunEntry { seed: 2, ..Default::default() });
        m.write(dir.path()).unwrap();
        let back = RunManifest::open(dir.path(), "x", "aaa").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.seeds, vec![2]);
        assert!(RunManifest::open(dir.path(), "x", "bbb").is_err());
        assert!(back.entry("vanilla", 2).is_ok());
        assert!(back.entry("deepfogguard", 2).is_err());
    }
}
