use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::error::CliError;

/// Collects a command's outputs in a hidden directory inside `out` and moves
/// them into place only on [`Staging::commit`]. Dropping without a commit
/// discards everything, including `out` itself if it was created here and is
/// still empty.
pub struct Staging {
    out: PathBuf,
    created_out: bool,
    dir: Option<TempDir>,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self, CliError> {
        let created_out = !out.exists();
        fs::create_dir_all(out)?;
        let dir = tempfile::Builder::new().prefix(".lgseg-staging-").tempdir_in(out)?;
        Ok(Self {
            out: out.to_path_buf(),
            created_out,
            dir: Some(dir),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.as_ref().expect("staging dir").path().join(name)
    }

    /// Path of `name` in the final output directory.
    pub fn final_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(p, bytes)?;
        Ok(())
    }

    /// Renames every staged file into the output directory.
    pub fn commit(mut self) -> Result<Vec<PathBuf>, CliError> {
        let dir = self.dir.take().expect("staging dir");
        let mut moved = Vec::new();
        move_tree(dir.path(), &self.out, &mut moved)?;
        moved.sort();
        Ok(moved)
    }
}

fn move_tree(from: &Path, to: &Path, moved: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            fs::create_dir_all(&target)?;
            move_tree(&entry.path(), &target, moved)?;
        } else {
            fs::rename(entry.path(), &target)?;
            moved.push(target);
        }
    }
    Ok(())
}

impl Drop for Staging {
    fn drop(&mut self) {
        if let Some(dir) = self.dir.take() {
            drop(dir);
            let empty = fs::read_dir(&self.out).map(|mut d| d.next().is_none()).unwrap_or(false);
            if self.created_out && empty {
                let _ = fs::remove_dir(&self.out);
            }
        }
    }
}
