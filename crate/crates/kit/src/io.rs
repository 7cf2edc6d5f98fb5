//! Filesystem access for datasets and raw tensors.

use std::fs;
use std::path::Path;

use bilbo_core::data::{dataset_from_idx, Dataset};

use crate::error::{KitError, KitResult};

pub fn read_file(path: &Path) -> KitResult<Vec<u8>> {
    fs::read(path).map_err(|e| KitError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> KitResult<()> {
    fs::write(path, bytes).map_err(|e| KitError::io(path, e))
}

pub fn create_dir(path: &Path) -> KitResult<()> {
    fs::create_dir_all(path).map_err(|e| KitError::io(path, e))
}

/// Loads an IDX image file (and optional label file), keeping at most
/// `limit` examples and scaling pixels to `[0, λ]`.
pub fn load_idx(images: &Path, labels: Option<&Path>, limit: Option<usize>, lambda: f64) -> KitResult<Dataset> {
    let img = read_file(images)?;
    let lab = labels.map(read_file).transpose()?;
    dataset_from_idx(&img, lab.as_deref(), limit, lambda).map_err(|source| {
        let path = match (&source, labels) {
            (bilbo_core::Error::Parse { message, .. }, Some(l)) if message.contains("label") => l.to_path_buf(),
            _ => images.to_path_buf(),
        };
        KitError::Data { path, source }
    })
}

/// Row-major little-endian `f64` payload.
pub fn write_f64_le(path: &Path, values: &[f64]) -> KitResult<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(path, &bytes)
}

pub fn read_f64_le(path: &Path) -> KitResult<Vec<f64>> {
    let bytes = read_file(path)?;
    if bytes.len() % 8 != 0 {
        return Err(KitError::Format {
            path: path.to_path_buf(),
            message: format!("length {} is not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}
