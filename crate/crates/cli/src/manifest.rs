//! Run manifests: everything needed to reproduce a run, written next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Config};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Wall-clock time of the run; the only field that differs between reruns.
    pub created_unix_s: u64,
    /// Rows skipped while reading inputs.
    pub input_warnings: usize,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Fully resolved configuration, overrides applied.
    pub config: Config,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<FileDigest>, CliError> {
    paths
        .iter()
        .map(|p| Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
        .collect()
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &Config,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        input_warnings: usize,
    ) -> Result<Self, CliError> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: config.seed,
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            input_warnings,
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            config: config.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let text = toml::to_string(self).map_err(|e| CliError::Io(format!("manifest: {e}")))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.message())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        fs::write(&input, "x").unwrap();
        let mut cfg = Config::default();
        cfg.seed = 99;
        let m = RunManifest::new("calibrate", &cfg, &[input], &[], 2).unwrap();
        let path = m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(&path).unwrap(), m);
        assert_eq!(m.seed, 99);
    }
}
