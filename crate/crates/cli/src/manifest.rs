//! Per-command manifests: the effective config, its hash, the seed and a
//! checksum of every artifact the command wrote. The timestamp lives only
//! here, so all other outputs are reproducible bitwise.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub config_source: String,
    /// Hash of the config with `output.dir` blanked, so the same experiment
    /// written to different directories hashes equally.
    pub config_sha256: String,
    pub config: String,
    pub created_unix: u64,
    pub tool_version: &'static str,
    pub artifacts: Vec<Artifact>,
}

/// Collects the files a command writes under one output directory.
pub struct Recorder {
    pub out: PathBuf,
    written: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Absolute path for `rel`, creating its parent directory.
    pub fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(p)
    }

    /// Marks `path` as an artifact of this command.
    pub fn record(&mut self, path: PathBuf) {
        if !self.written.contains(&path) {
            self.written.push(path);
        }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel)?;
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.record(p.clone());
        Ok(p)
    }

    pub fn finish(self, command: &str, seed: u64, config_source: String, config: String, config_sha256: String) -> Result<PathBuf> {
        let mut artifacts = Vec::new();
        for p in &self.written {
            let bytes = std::fs::read(p).with_context(|| format!("reading back {}", p.display()))?;
            let rel = p.strip_prefix(&self.out).unwrap_or(p);
            artifacts.push(Artifact {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            seed,
            config_source,
            config_sha256,
            config,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            tool_version: env!("CARGO_PKG_VERSION"),
            artifacts,
        };
        let path = self.out.join(format!("manifest-{command}.json"));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}
