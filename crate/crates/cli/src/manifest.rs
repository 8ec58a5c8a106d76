//! `manifest.json`: what each stage read and wrote, with content hashes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Relative path to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub run: String,
    pub seed: u64,
    pub config_sha256: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::runtime(format!("cannot hash {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    /// Loads the directory's manifest, or starts a fresh one. A manifest
    /// from a different config is discarded.
    pub fn open(dir: &Path, run: &str, seed: u64, config_sha256: &str) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path)?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::runtime(format!("corrupt {}: {e}", path.display())))?;
            if m.config_sha256 == config_sha256 {
                return Ok(m);
            }
        }
        Ok(Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            run: run.into(),
            seed,
            config_sha256: config_sha256.into(),
            stages: BTreeMap::new(),
        })
    }

    pub fn record(&mut self, dir: &Path, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<(), CliError> {
        let hash_all = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>, CliError> {
            paths
                .iter()
                .map(|p| {
                    let rel = p.strip_prefix(dir).unwrap_or(p);
                    Ok((rel.to_string_lossy().replace('\\', "/"), file_sha256(p)?))
                })
                .collect()
        };
        let rec = StageRecord {
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        };
        self.stages.insert(stage.into(), rec);
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn reopen_keeps_matching_config_only() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        fs::write(&f, "x\n").unwrap();
        let mut m = Manifest::open(dir.path(), "r", 1, "c1").unwrap();
        m.record(dir.path(), "collect", &[], &[f.clone()]).unwrap();
        m.save(dir.path()).unwrap();
        let again = Manifest::open(dir.path(), "r", 1, "c1").unwrap();
        assert_eq!(again.stages["collect"].outputs["a.csv"], sha256_hex(b"x\n"));
        assert!(Manifest::open(dir.path(), "r", 1, "c2").unwrap().stages.is_empty());
    }
}
