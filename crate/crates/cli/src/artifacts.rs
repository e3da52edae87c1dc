//! Run manifests and the output-directory lock.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const LOCK_FILE: &str = ".pneumox.lock";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Written to `manifests/<command>.json` after every successful command.
/// The timestamp lives here and nowhere else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub created_unix: u64,
    pub tool_version: String,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Files under `dir`, recursively, in sorted order.
pub fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let p = entry.map_err(|e| CliError::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_manifest(
    output_dir: &Path,
    command: &str,
    seed: u64,
    config_sha256: &str,
    artifacts: &[PathBuf],
) -> Result<PathBuf, CliError> {
    let mut entries = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let (sha256, bytes) = sha256_file(a)?;
        let rel = a.strip_prefix(output_dir).unwrap_or(a);
        entries.push(ArtifactEntry { path: rel.to_string_lossy().replace('\\', "/"), sha256, bytes });
    }
    let manifest = RunManifest {
        command: command.to_string(),
        seed,
        config_sha256: config_sha256.to_string(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        artifacts: entries,
    };
    let dir = output_dir.join("manifests");
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let path = dir.join(format!("{command}.json"));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(output_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(output_dir).map_err(|e| CliError::io(output_dir, e))?;
        let path = output_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Config(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                output_dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
