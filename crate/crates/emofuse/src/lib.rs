//! Files and command line around [`emofuse_core`]: WAV and PGM/PPM
//! readers and writers, the clip manifest, checkpoints, run configuration,
//! the file-backed leave-one-actor-out runner and the `emofuse` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod image;
pub mod manifest;
pub mod runner;
pub mod wav;

pub use emofuse_core::{Error, Result};

use std::io;
use std::path::Path;

pub(crate) fn io_error(path: &Path, err: io::Error) -> Error {
    Error::Io(format!("{}: {err}", path.display()))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    std::fs::write(tmp, bytes).map_err(|e| io_error(tmp, e))?;
    std::fs::rename(tmp, path).map_err(|e| io_error(path, e))
}
