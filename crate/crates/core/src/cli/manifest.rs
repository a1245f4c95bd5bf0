use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Checksum over every file of the input corpus, if one was read.
    pub corpus_checksum: Option<String>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Digest over the names and contents of every regular file in `dir`, in name order.
pub fn directory_checksum(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE));
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let name = p.file_name().expect("file name").to_string_lossy().into_owned();
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        let body = fs::read(&p)?;
        h.update((body.len() as u64).to_le_bytes());
        h.update(&body);
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value, corpus_checksum: Option<String>) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            corpus_checksum,
            artifacts: Vec::new(),
        }
    }

    /// Checksums `files` (inside `out_dir`) and writes `manifest.json` there.
    pub fn write(mut self, out_dir: &Path, files: &[PathBuf]) -> Result<PathBuf> {
        let mut artifacts = Vec::with_capacity(files.len());
        for f in files {
            let rel = f
                .strip_prefix(out_dir)
                .map_err(|_| Error::InvalidInput(format!("{} is outside {}", f.display(), out_dir.display())))?;
            artifacts.push(Artifact {
                path: rel.to_string_lossy().into_owned(),
                sha256: sha256_file(f)?,
            });
        }
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        self.artifacts = artifacts;
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Re-hashes every artifact under `out_dir` and reports the first mismatch.
    pub fn verify(&self, out_dir: &Path) -> Result<()> {
        for a in &self.artifacts {
            let got = sha256_file(&out_dir.join(&a.path))?;
            if got != a.sha256 {
                return Err(Error::InvalidInput(format!("checksum mismatch for {}", a.path)));
            }
        }
        Ok(())
    }
}
