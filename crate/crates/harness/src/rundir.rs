//! Single-writer run directories.
//!
//! A `.incomplete` marker is written first and removed only after the
//! manifest, so an interrupted run is detected the next time the directory
//! is used.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mia_core::metrics::EvalReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const MARKER: &str = ".incomplete";
pub const MANIFEST: &str = "manifest.json";
pub const SNAPSHOT: &str = "config.snapshot";
pub const REPORT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Hash of the member/nonmember splits, when the stage built data.
    pub data_hash: Option<String>,
    pub reports: Vec<EvalReport>,
    pub failures: usize,
    /// Stage-specific summary.
    pub details: serde_json::Value,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))
            .with_context(|| format!("reading manifest in {}", dir.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub struct RunDir {
    path: PathBuf,
    files: Vec<FileEntry>,
}

/// Keeps attack names usable as file names.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '=') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl RunDir {
    /// Opens `path` for a new run. A directory holding a partial run, a
    /// finished run, or unrelated files is refused unless `force` is set;
    /// `force` only clears directories that look like run directories.
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let partial = path.join(MARKER).exists();
            let finished = path.join(MANIFEST).exists();
            let empty = fs::read_dir(path)?.next().is_none();
            if !empty {
                if !(partial || finished) {
                    bail!(
                        "output directory {} is not empty and is not a run directory",
                        path.display()
                    );
                }
                if !force {
                    if partial {
                        bail!(
                            "partial run detected in {}: a previous run did not finish; pass --force to discard it",
                            path.display()
                        );
                    }
                    bail!(
                        "{} already holds a finished run; pass --force to replace it",
                        path.display()
                    );
                }
                fs::remove_dir_all(path).with_context(|| format!("clearing {}", path.display()))?;
            }
        }
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        fs::write(path.join(MARKER), b"")?;
        Ok(Self {
            path: path.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let bytes = contents.as_ref();
        fs::write(self.path.join(name), bytes).with_context(|| format!("writing {name}"))?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    pub fn write_snapshot(&mut self, config: &Config) -> Result<()> {
        self.write(SNAPSHOT, config.snapshot())
    }

    /// Writes the report and manifest, then clears the marker.
    pub fn finish(mut self, mut manifest: RunManifest, report: &str) -> Result<RunManifest> {
        self.write(REPORT, report)?;
        self.files.sort_by(|a, b| a.name.cmp(&b.name));
        manifest.files = self.files.clone();
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(self.path.join(MANIFEST), json)?;
        fs::remove_file(self.path.join(MARKER))?;
        Ok(manifest)
    }
}
