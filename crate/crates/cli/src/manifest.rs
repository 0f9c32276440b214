//! Run manifests: what was run, on which inputs, producing which outputs.
//!
//! Manifests hold no timestamps or host details, so re-running a command
//! rewrites an identical manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    /// Effective configuration in canonical text form.
    pub config: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Digests of a file, or of every file directly inside a directory (sorted).
pub fn digest_path(path: &Path) -> Result<Vec<FileDigest>> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        files.extend(entries);
    } else {
        files.push(path.to_path_buf());
    }
    files
        .into_iter()
        .map(|p| {
            Ok(FileDigest {
                sha256: sha256_file(&p)?,
                path: p.display().to_string(),
            })
        })
        .collect()
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], config: String) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: args.to_vec(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.extend(digest_path(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.extend(digest_path(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fails if any recorded input no longer has its recorded digest.
    pub fn verify_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let now = sha256_file(Path::new(&f.path))?;
            if now != f.sha256 {
                bail!("input {} changed since the manifest was written", f.path);
            }
        }
        Ok(())
    }
}

/// Default manifest location for a primary output path.
pub fn default_path(primary_output: &Path) -> PathBuf {
    let mut name = primary_output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "run".into());
    name.push(".manifest.json");
    primary_output.with_file_name(name)
}
