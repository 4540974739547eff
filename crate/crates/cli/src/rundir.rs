//! The run directory: a lock against concurrent writers, output path
//! confinement and content hashing.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};

use sarcgen_core::{Error, Result};
use sha2::{Digest, Sha256};

pub const LOCK_FILE: &str = ".sarcgen.lock";

/// An exclusively held run directory. The lock is released on drop.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    Path::new("/proc").join(pid.to_string()).exists()
}

impl RunDir {
    /// Creates the directory if needed and takes the lock. A lock left by a
    /// process that no longer exists is replaced.
    pub fn open(root: &Path) -> Result<RunDir> {
        fs::create_dir_all(root).map_err(|e| Error::data(format!("{}: {e}", root.display())))?;
        let lock = root.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&lock) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(RunDir {
                        root: root.to_path_buf(),
                        lock,
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&lock).unwrap_or_default();
                    match holder.trim().parse::<u32>() {
                        Ok(pid) if pid_alive(pid) => {
                            return Err(Error::data(format!(
                                "run directory {} is in use by process {pid} (lock file {LOCK_FILE})",
                                root.display()
                            )))
                        }
                        _ => {
                            log::warn!("removing stale lock {}", lock.display());
                            let _ = fs::remove_file(&lock);
                        }
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(Error::data(format!("could not lock {}", root.display())))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `rel` inside the run directory. Absolute paths and `..` are refused so
    /// no command writes elsewhere.
    pub fn path(&self, rel: &Path) -> Result<PathBuf> {
        if rel.as_os_str().is_empty()
            || rel
                .components()
                .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
        {
            return Err(Error::config(
                "out",
                format!("{} must be a relative path inside the run directory", rel.display()),
            ));
        }
        Ok(self.root.join(rel))
    }

    /// Like [`RunDir::path`], creating the parent directories.
    pub fn out(&self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let p = self.path(rel.as_ref())?;
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Writes through a sibling temporary file so readers never see a partial
/// artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::data(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash over relative names and contents of every file below `path`, in
/// sorted order. A plain file hashes as [`sha256_file`].
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut files = Vec::new();
    let mut stack = vec![path.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(path).expect("below root");
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(sha256_file(&f)?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
