//! Outputs are written to a temporary sibling first and moved into place
//! only when a command succeeds, so failures leave nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::CliError;

fn parent_of(target: &Path) -> PathBuf {
    match target.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub struct StagedDir {
    tmp: TempDir,
    target: PathBuf,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self, CliError> {
        if target.exists() && !target.is_dir() {
            return Err(CliError::Usage(format!("{} exists and is not a directory", target.display())));
        }
        let parent = parent_of(target);
        fs::create_dir_all(&parent).map_err(|e| io_error(&parent, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".semantic-sfm-staging")
            .tempdir_in(&parent)
            .map_err(|e| io_error(&parent, e))?;
        Ok(Self { tmp, target: target.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        self.tmp.path()
    }

    /// Move the staged tree into the target, replacing same-named entries.
    pub fn commit(self) -> Result<(), CliError> {
        if !self.target.exists() {
            let staged = self.tmp.keep();
            return fs::rename(&staged, &self.target).map_err(|e| io_error(&self.target, e));
        }
        for entry in fs::read_dir(self.tmp.path()).map_err(|e| io_error(self.tmp.path(), e))? {
            let entry = entry.map_err(|e| io_error(self.tmp.path(), e))?;
            let dest = self.target.join(entry.file_name());
            if dest.is_dir() {
                fs::remove_dir_all(&dest).map_err(|e| io_error(&dest, e))?;
            }
            fs::rename(entry.path(), &dest).map_err(|e| io_error(&dest, e))?;
        }
        Ok(())
    }
}

/// Write a file through a temporary sibling and rename it into place.
pub fn write_file(target: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = parent_of(target);
    fs::create_dir_all(&parent).map_err(|e| io_error(&parent, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(|e| io_error(&parent, e))?;
    std::io::Write::write_all(&mut tmp, bytes).map_err(|e| io_error(tmp.path(), e))?;
    tmp.persist(target).map_err(|e| io_error(target, e.error))?;
    Ok(())
}
