//! Atomic file writes: artifacts land fully or not at all.

use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temp file in the target directory, then renames it
/// over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    let dir = dir.unwrap_or_else(|| Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    std::io::Write::write_all(&mut tmp.as_file(), bytes)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path.display().to_string(), e.error))?;
    Ok(())
}
