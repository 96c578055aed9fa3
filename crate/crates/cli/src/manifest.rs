//! Run manifest and output-directory lock.

use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const LOCK_FILE: &str = ".nbm-audit.lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Held for the lifetime of a run; removes the lock file on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))
            .map_err(CliError::Validation)?;
        let path = dir.join(LOCK_FILE);
        OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            CliError::Validation(anyhow::anyhow!("output directory {} is locked by another run ({e})", dir.display()))
        })?;
        Ok(Self { path })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let mut f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Output paths are recorded relative to the output directory so that two
/// runs into different directories produce comparable manifests.
pub fn digests(paths: &[PathBuf], relative_to: Option<&Path>) -> anyhow::Result<Vec<FileDigest>> {
    let mut out = Vec::new();
    for p in paths {
        let shown = relative_to.and_then(|base| p.strip_prefix(base).ok()).unwrap_or(p);
        out.push(FileDigest { path: shown.display().to_string(), sha256: sha256_file(p)? });
    }
    Ok(out)
}
