//! Small filesystem helpers shared by every writer in the crate.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Write `bytes` to a sibling temp file and rename it over `path`, so a
/// failure partway through never leaves a half-written output behind and
/// reruns with identical content are byte-identical.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::data(format!("{} has no file name", path.display())))?;
    let mut tmp = PathBuf::from(path);
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
