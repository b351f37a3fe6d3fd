//! IDX files (the MNIST distribution format), optionally gzipped.

use std::path::Path;

use atdl_core::dataset::{Dataset, ImageShape};
use atdl_core::Matrix;

use crate::error::{AppError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Unsigned-byte images: `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, &[u8]), String> {
    let magic = be_u32(bytes, 0).ok_or("truncated header")?;
    if magic != IMAGES_MAGIC {
        return Err(format!("bad image magic {magic:#010x}"));
    }
    let n = be_u32(bytes, 4).ok_or("truncated header")? as usize;
    let rows = be_u32(bytes, 8).ok_or("truncated header")? as usize;
    let cols = be_u32(bytes, 12).ok_or("truncated header")? as usize;
    let body = &bytes[16..];
    let want = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or("header dimensions overflow")?;
    if body.len() != want {
        return Err(format!("{n}x{rows}x{cols} images need {want} bytes, found {}", body.len()));
    }
    Ok((n, rows, cols, body))
}

pub fn parse_labels(bytes: &[u8]) -> std::result::Result<&[u8], String> {
    let magic = be_u32(bytes, 0).ok_or("truncated header")?;
    if magic != LABELS_MAGIC {
        return Err(format!("bad label magic {magic:#010x}"));
    }
    let n = be_u32(bytes, 4).ok_or("truncated header")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(format!("{n} labels declared, found {} bytes", body.len()));
    }
    Ok(body)
}

/// Pixels are scaled by 1/255 (see [`super::pixel`]). The label vocabulary
/// is `0..=max(label)`, at least ten entries.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = super::read_maybe_gz(images_path)?;
    let lab_bytes = super::read_maybe_gz(labels_path)?;
    let (n, rows, cols, pixels) = parse_images(&img_bytes).map_err(|m| AppError::format(images_path, m))?;
    let labels = parse_labels(&lab_bytes).map_err(|m| AppError::format(labels_path, m))?;
    if labels.len() != n {
        return Err(AppError::format(
            labels_path,
            format!("{} labels for {n} images in {}", labels.len(), images_path.display()),
        ));
    }
    let x = Matrix::from_vec(n, rows * cols, pixels.iter().map(|&p| super::pixel(p)).collect())?;
    let labels: Vec<usize> = labels.iter().map(|&l| usize::from(l)).collect();
    let vocab = labels.iter().max().map_or(10, |m| (m + 1).max(10));
    Ok(Dataset::new(
        x,
        labels,
        Dataset::numbered_labels(vocab),
        ImageShape::new(rows, cols, 1),
    )?)
}

/// Encodes images and labels as a pair of IDX byte buffers.
pub fn encode(count: usize, rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [LABELS_MAGIC, count as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}
