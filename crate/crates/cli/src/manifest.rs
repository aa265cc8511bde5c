//! Run manifests: the effective config plus seeds and checksums.
//!
//! A manifest is itself a loadable config ([`RunConfig::load`] reads the
//! `[config]` table), so `deepact --config out/train_manifest.toml train`
//! repeats a run.

use std::collections::BTreeMap;
use std::io::Read as _;
use std::path::Path;

use deepact::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub version: String,
    /// Whether RBM pretraining ran before fine-tuning.
    pub pretrained: Option<bool>,
    /// Decimal strings; derived seeds overflow TOML integers.
    pub seeds: BTreeMap<String, String>,
    /// sha256 of every input, keyed by role.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every artifact written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

impl RunInfo {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            pretrained: None,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: RunInfo,
    pub config: RunConfig,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn hash_file(hasher: &mut Sha256, path: &Path) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut f = std::fs::File::open(path).map_err(io)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(io)?;
        if n == 0 {
            return Ok(());
        }
        hasher.update(&buf[..n]);
    }
}

/// Hex sha256 of a file, or of every file in a directory (names and
/// contents, in name order).
pub fn checksum(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            hasher.update(p.file_name().expect("file").to_string_lossy().as_bytes());
            hasher.update([0]);
            hash_file(&mut hasher, &p)?;
        }
    } else {
        hash_file(&mut hasher, path)?;
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, "abc").unwrap();
        assert_eq!(
            checksum(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(checksum(dir.path()).unwrap().len(), 64);
    }

    #[test]
    fn manifest_loads_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::default();
        config.model.layers = vec![3];
        config.dataset.path = dir.path().join("data.txt");
        let mut run = RunInfo::new("train");
        run.seeds.insert("finetune".into(), u64::MAX.to_string());
        let m = Manifest { run, config: config.clone() };
        let path = dir.path().join("m.toml");
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
        assert_eq!(RunConfig::load(&path).unwrap(), config);
    }
}
