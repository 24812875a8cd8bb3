//! Staged output directory, CSV text and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::error::{RunError, RunResult};

pub const MANIFEST_NAME: &str = "manifest.json";

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Comma-separated table assembled in memory.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let text = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",") + "\n";
        Self { text, columns: header.len() }
    }

    /// Appends a row of already formatted cells.
    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn numbers(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.row(&cells);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    /// `ok` or `failed`.
    pub status: String,
    pub message: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub experiment: String,
    pub config: serde_json::Value,
    /// Unix time in seconds.
    pub started_at: f64,
    pub finished_at: f64,
    pub stages: Vec<StageStatus>,
    /// Every emitted file except this manifest, sorted by path.
    pub files: Vec<FileEntry>,
    pub summary: serde_json::Value,
    pub exit_code: i32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written into a hidden sibling of the output directory; nothing
/// reaches the output directory until [`Staging::publish`].
pub struct Staging {
    dir: TempDir,
    target: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl Staging {
    pub fn new(target: &Path) -> RunResult<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| RunError::Io(format!("{}: {e}", parent.display())))?;
        let dir = tempfile::Builder::new()
            .prefix(".binormal-staging-")
            .tempdir_in(&parent)
            .map_err(|e| RunError::Io(format!("staging in {}: {e}", parent.display())))?;
        Ok(Self { dir, target: target.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> RunResult<()> {
        if name == MANIFEST_NAME || name.starts_with('/') || name.split('/').any(|p| p == ".." || p.is_empty()) {
            return Err(RunError::Io(format!("refusing output name `{name}`")));
        }
        let path = self.dir.path().join(name);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, bytes).map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
        let entry = FileEntry { path: name.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) };
        self.files.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> RunResult<()> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| RunError::Io(e.to_string()))?;
        text.push(b'\n');
        self.write(name, &text)
    }

    pub fn inventory(&self) -> Vec<FileEntry> {
        self.files.values().cloned().collect()
    }

    /// Writes the manifest and moves the staged tree into place.
    ///
    /// An existing target is replaced only if it is empty or holds a previous
    /// run (has a manifest); anything else is left alone and reported.
    pub fn publish(self, manifest: &RunManifest) -> RunResult<PathBuf> {
        let mut text = serde_json::to_vec_pretty(manifest).map_err(|e| RunError::Io(e.to_string()))?;
        text.push(b'\n');
        fs::write(self.dir.path().join(MANIFEST_NAME), text)?;
        let target = self.target.clone();
        let io = |what: &str, e: std::io::Error| RunError::Io(format!("{what} {}: {e}", target.display()));
        let mut retired = None;
        if target.exists() {
            let empty = fs::read_dir(&target).map_err(|e| io("reading", e))?.next().is_none();
            if !empty && !target.join(MANIFEST_NAME).is_file() {
                return Err(RunError::Io(format!(
                    "{} exists and is not a previous run directory; choose another --out",
                    target.display()
                )));
            }
            let old = self.dir.path().with_extension("retired");
            fs::rename(&target, &old).map_err(|e| io("moving aside", e))?;
            retired = Some(old);
        }
        let staged = self.dir.keep();
        fs::rename(&staged, &target).map_err(|e| io("publishing", e))?;
        if let Some(old) = retired {
            fs::remove_dir_all(&old).map_err(|e| RunError::Io(format!("removing {}: {e}", old.display())))?;
        }
        Ok(target)
    }
}

/// Paths of every regular file below `dir`, relative and `/`-separated.
pub fn list_files(dir: &Path) -> std::io::Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).unwrap_or(&path);
                out.push(rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}
