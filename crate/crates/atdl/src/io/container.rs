//! Generic dataset container.
//!
//! ```text
//! "ATDLDS01"
//! u32 version = 1, rows, feature_count, height, width, channels, label_vocab_size
//! f32 features[rows * feature_count]
//! u32 labels[rows]
//! u64 checksum            sum of every preceding byte, wrapping
//! ```
//!
//! All integers and floats are little-endian. Label names are not stored;
//! loaded datasets use `"0"`, `"1"`, ...

use std::path::Path;

use atdl_core::dataset::{Dataset, ImageShape};
use atdl_core::Matrix;

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"ATDLDS01";
pub const VERSION: u32 = 1;
const HEADER_BYTES: usize = 8 + 7 * 4;

pub fn byte_sum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| acc.wrapping_add(u64::from(b)))
}

pub fn encode(d: &Dataset) -> Vec<u8> {
    let (rows, cols) = d.x().shape();
    let s = d.shape();
    let mut out = Vec::with_capacity(HEADER_BYTES + rows * cols * 4 + rows * 4 + 8);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        rows as u32,
        cols as u32,
        s.height as u32,
        s.width as u32,
        s.channels as u32,
        d.num_classes() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in d.x().as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &l in d.labels() {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    let sum = byte_sum(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Dataset, String> {
    if bytes.len() < HEADER_BYTES + 8 {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..8] != MAGIC {
        return Err("bad magic".into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = byte_sum(body);
    if stored != computed {
        return Err(format!("checksum mismatch: stored {stored:#x}, computed {computed:#x}"));
    }
    let field = |i: usize| {
        let at = 8 + 4 * i;
        u32::from_le_bytes(body[at..at + 4].try_into().expect("4 bytes")) as usize
    };
    let version = field(0) as u32;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let (rows, cols, height, width, channels, vocab) = (field(1), field(2), field(3), field(4), field(5), field(6));
    let shape = ImageShape::new(height, width, channels);
    if shape.features() != cols {
        return Err(format!("image {height}x{width}x{channels} does not match {cols} features"));
    }
    let want = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_add(rows))
        .and_then(|n| n.checked_mul(4))
        .ok_or("header dimensions overflow")?;
    let payload = &body[HEADER_BYTES..];
    if payload.len() != want {
        return Err(format!("header declares {want} payload bytes, found {}", payload.len()));
    }
    let (feat, labs) = payload.split_at(rows * cols * 4);
    let x: Vec<f64> = feat
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let labels: Vec<usize> = labs
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let x = Matrix::from_vec(rows, cols, x).map_err(|e| e.to_string())?;
    Dataset::new(x, labels, Dataset::numbered_labels(vocab), shape).map_err(|e| e.to_string())
}

pub fn load_container(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|m| AppError::format(path, m))
}

pub fn save_container(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode(d)).map_err(|e| AppError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Dataset {
        let x = Matrix::from_vec(2, 4, vec![0.0, 0.25, 0.5, 1.0, 0.125, 0.75, 0.375, 0.0625]).unwrap();
        Dataset::new(x, vec![2, 0], Dataset::numbered_labels(3), ImageShape::new(2, 2, 1)).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..8], b"ATDLDS01");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[32..36].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 36 + 2 * 4 * 4 + 2 * 4 + 8);
        let n = bytes.len();
        let sum = u64::from_le_bytes(bytes[n - 8..].try_into().unwrap());
        assert_eq!(sum, bytes[..n - 8].iter().map(|&b| b as u64).sum::<u64>());
    }

    #[test]
    fn round_trip_and_corruption() {
        let d = sample();
        let bytes = encode(&d);
        assert_eq!(decode(&bytes).unwrap(), d);

        let mut flipped = bytes.clone();
        flipped[40] ^= 1;
        assert!(decode(&flipped).unwrap_err().contains("checksum"));

        let mut version = bytes.clone();
        version[8] = 2;
        // Keep the checksum consistent so the version check is what fails.
        let n = version.len();
        let sum = byte_sum(&version[..n - 8]);
        version[n - 8..].copy_from_slice(&sum.to_le_bytes());
        assert!(decode(&version).unwrap_err().contains("version"));
    }

    #[test]
    fn inconsistent_dims() {
        let mut bytes = encode(&sample());
        bytes[16] = 5;
        let n = bytes.len();
        let sum = byte_sum(&bytes[..n - 8]);
        bytes[n - 8..].copy_from_slice(&sum.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn empty_dataset() {
        let d = Dataset::new(Matrix::zeros(0, 6), vec![], Dataset::numbered_labels(4), ImageShape::new(2, 3, 1)).unwrap();
        let back = decode(&encode(&d)).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.shape(), ImageShape::new(2, 3, 1));
        assert_eq!(back.num_classes(), 4);
    }

    proptest! {
        #[test]
        fn f32_data_round_trips_bitwise(vals in prop::collection::vec(0.0f32..=1.0, 1..40), seed in 0usize..7) {
            let cols = 1 + seed % 4;
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let x: Vec<f64> = vals[..rows * cols].iter().map(|&v| f64::from(v)).collect();
            let labels: Vec<usize> = (0..rows).map(|i| (i + seed) % 3).collect();
            let d = Dataset::new(Matrix::from_vec(rows, cols, x).unwrap(), labels, Dataset::numbered_labels(3), ImageShape::flat(cols)).unwrap();
            let bytes = encode(&d);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &d);
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
