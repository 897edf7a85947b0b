//! Atomic file output: write to a sibling temporary, then rename into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

/// Marker that identifies a directory as a previous run we may replace.
pub const MANIFEST_FILE: &str = "manifest.json";

static COUNTER: AtomicU64 = AtomicU64::new(0);

fn sibling(path: &Path, tag: &str) -> Result<PathBuf> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("output path {} has no file name", path.display())))?
        .to_string_lossy();
    let unique = format!(".{name}.{tag}-{}-{}", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed));
    Ok(path.with_file_name(unique))
}

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.is_dir() {
        return Err(Error::invalid(format!("{} is a directory", path.display())));
    }
    let parent = parent_of(path);
    if !parent.is_dir() {
        return Err(Error::invalid(format!("output directory {} does not exist", parent.display())));
    }
    let tmp = sibling(path, "tmp")?;
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// A directory assembled under a temporary name and renamed into place on
/// `commit`. Dropped without committing, it is removed.
#[derive(Debug)]
pub struct StagedDir {
    target: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl StagedDir {
    /// Refuses to replace an existing directory unless it is empty or holds
    /// a manifest from an earlier run.
    pub fn create(target: &Path) -> Result<Self> {
        if target.exists() {
            if !target.is_dir() {
                return Err(Error::invalid(format!("{} exists and is not a directory", target.display())));
            }
            let empty = fs::read_dir(target)?.next().is_none();
            if !empty && !target.join(MANIFEST_FILE).is_file() {
                return Err(Error::invalid(format!(
                    "refusing to replace non-empty directory {} without {MANIFEST_FILE}",
                    target.display()
                )));
            }
        }
        let parent = parent_of(target);
        if !parent.is_dir() {
            return Err(Error::invalid(format!("output directory {} does not exist", parent.display())));
        }
        let staging = sibling(target, "staging")?;
        fs::create_dir(&staging)?;
        Ok(StagedDir { target: target.to_path_buf(), staging, committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn write(&self, relative: &str, bytes: &[u8]) -> Result<()> {
        let path = self.staging.join(relative);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn commit(mut self) -> Result<()> {
        if self.target.exists() {
            let old = sibling(&self.target, "old")?;
            fs::rename(&self.target, &old)?;
            if let Err(e) = fs::rename(&self.staging, &self.target) {
                let _ = fs::rename(&old, &self.target);
                return Err(e.into());
            }
            let _ = fs::remove_dir_all(&old);
        } else {
            fs::rename(&self.staging, &self.target)?;
        }
        self.committed = true;
        Ok(())
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
