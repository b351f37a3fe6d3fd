//! CIFAR-10 binary batches: 3,073-byte records of one label byte followed by
//! 1,024 red, 1,024 green and 1,024 blue bytes.

use std::path::{Path, PathBuf};

use atdl_core::dataset::{Dataset, ImageShape};
use atdl_core::Matrix;

use crate::error::{AppError, Result};

pub const RECORD_BYTES: usize = 1 + 3 * 1024;
pub const CLASS_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

pub fn parse_batch(bytes: &[u8], x: &mut Vec<f64>, labels: &mut Vec<usize>) -> std::result::Result<(), String> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(format!(
            "{} bytes is not a whole number of {RECORD_BYTES}-byte records",
            bytes.len()
        ));
    }
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = usize::from(rec[0]);
        if label >= CLASS_NAMES.len() {
            return Err(format!("record {i} has label {label}"));
        }
        labels.push(label);
        x.extend(rec[1..].iter().map(|&b| super::pixel(b)));
    }
    Ok(())
}

/// Concatenates batches in the order given, keeping RGB planes.
pub fn load_cifar10(paths: &[PathBuf]) -> Result<Dataset> {
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = super::read_maybe_gz(p)?;
        parse_batch(&bytes, &mut x, &mut labels).map_err(|m| AppError::format(p, m))?;
    }
    let names = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let x = Matrix::from_vec(labels.len(), RECORD_BYTES - 1, x)?;
    Ok(Dataset::new(x, labels, names, ImageShape::new(32, 32, 3))?)
}

pub fn load_one(path: &Path) -> Result<Dataset> {
    load_cifar10(&[path.to_path_buf()])
}
