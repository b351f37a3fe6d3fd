//! Dataset readers and writers.

pub mod cifar;
pub mod container;
pub mod csv;
pub mod idx;

use std::io::Read;
use std::path::Path;

use crate::error::{AppError, Result};

/// An 8-bit intensity in `[0, 1]`, rounded to `f32` precision so datasets
/// survive the container format unchanged.
pub fn pixel(b: u8) -> f64 {
    f64::from(f32::from(b) / 255.0)
}

/// Reads a whole file, inflating it first when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| AppError::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}
