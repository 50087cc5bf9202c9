//! Benchmark-entry manifests: the card, traces, run scripts and computed
//! profile of one submission, each pinned by a SHA-256 digest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkEntry {
    pub card: FileRef,
    pub traces: Vec<FileRef>,
    /// Scripts are hashed, never executed.
    pub scripts: Vec<FileRef>,
    pub profile: FileRef,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn file_ref(path: &Path) -> Result<FileRef> {
    Ok(FileRef {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Relative paths resolve against the manifest's directory first, then
/// against the working directory.
fn resolve(path: &str, manifest_dir: &Path) -> PathBuf {
    let p = PathBuf::from(path);
    let beside = manifest_dir.join(&p);
    if p.is_absolute() || !beside.exists() {
        p
    } else {
        beside
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub entry: String,
    pub ok: bool,
    pub checked: usize,
    pub problems: Vec<String>,
}

pub fn load(path: &Path) -> Result<BenchmarkEntry> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a benchmark entry", path.display()))
}

pub fn verify(path: &Path) -> Result<VerifyReport> {
    let entry = load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let all: Vec<&FileRef> = std::iter::once(&entry.card)
        .chain(&entry.traces)
        .chain(&entry.scripts)
        .chain(std::iter::once(&entry.profile))
        .collect();
    let mut problems = Vec::new();
    for f in &all {
        let p = resolve(&f.path, dir);
        match sha256_file(&p) {
            Ok(h) if h == f.sha256 => {}
            Ok(h) => problems.push(format!("{}: digest {h} does not match recorded {}", f.path, f.sha256)),
            Err(_) => problems.push(format!("{}: missing or unreadable", f.path)),
        }
    }
    Ok(VerifyReport {
        entry: path.display().to_string(),
        ok: problems.is_empty(),
        checked: all.len(),
        problems,
    })
}

/// Path of the profile an entry points at.
pub fn profile_path(entry_path: &Path) -> Result<PathBuf> {
    let entry = load(entry_path)?;
    let dir = entry_path.parent().unwrap_or(Path::new("."));
    let p = resolve(&entry.profile.path, dir);
    if !p.exists() {
        bail!("entry {} points at missing profile {}", entry_path.display(), entry.profile.path);
    }
    Ok(p)
}
