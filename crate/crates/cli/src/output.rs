//! Shared input and output plumbing for the commands.

use std::path::{Path, PathBuf};

use ghostlite::data::{load_dataset, LoadedDataset};
use ghostlite::io::write_atomic;

use crate::failure::{Context, Failure, Outcome};

/// Writes a file atomically, creating its parent directory.
pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).or_data(format!("cannot create {}", dir.display()))?;
    }
    write_atomic(path, bytes.as_ref()).or_data(format!("cannot write {}", path.display()))
}

pub fn metadata_path(data_dir: &Path, metadata: Option<PathBuf>) -> PathBuf {
    metadata.unwrap_or_else(|| data_dir.join("metadata.csv"))
}

/// Loads a dataset; fails when no usable record remains.
pub fn load(data_dir: &Path, metadata: &Path) -> Outcome<LoadedDataset> {
    if !data_dir.is_dir() {
        return Err(Failure::data(format!("data directory {} does not exist", data_dir.display())));
    }
    let loaded = load_dataset(data_dir, metadata).or_data(format!("cannot load {}", metadata.display()))?;
    if !loaded.rejected.is_empty() {
        log::warn!("{} metadata rows rejected", loaded.rejected.len());
    }
    if loaded.records.is_empty() {
        return Err(Failure::data(format!("no usable images listed in {}", metadata.display())));
    }
    log::info!("loaded {} images from {}", loaded.records.len(), data_dir.display());
    Ok(loaded)
}
