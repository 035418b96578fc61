//! Run directories: exclusive lock file and manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crosstext::{Error, Result};

/// Exclusive guard on a run directory, released on drop. A second command
/// touching the same directory fails instead of interleaving writes.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(run_dir)?;
        let path = run_dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Arg(format!(
                "run directory is locked by another command ({})",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Sorted key=value manifest of everything that determined a run.
pub fn write_manifest(run_dir: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(run_dir)?;
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(run_dir.join("manifest"), out)?;
    Ok(())
}
