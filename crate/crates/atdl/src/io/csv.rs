//! Comma-separated tables with a header row: one integer label column and
//! numeric feature columns.

use std::path::Path;

use atdl_core::dataset::{Dataset, ImageShape};
use atdl_core::Matrix;

use crate::error::{AppError, Result};

/// Feature values are divided by `scale` and must then lie in `[0, 1]`.
pub fn load_csv(path: &Path, label_column: &str, scale: f64) -> Result<Dataset> {
    let mut reader = ::csv::Reader::from_path(path).map_err(|e| AppError::format(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| AppError::format(path, e.to_string()))?.clone();
    let label_at = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| AppError::format(path, format!("no column named {label_column:?}")))?;
    let cols = headers.len() - 1;
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| AppError::format(path, e.to_string()))?;
        let line = row + 2;
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if j == label_at {
                let l: usize = field
                    .parse()
                    .map_err(|_| AppError::format(path, format!("line {line}: label {field:?} is not a non-negative integer")))?;
                labels.push(l);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| AppError::format(path, format!("line {line}: {field:?} is not a number")))?;
                x.push(v / scale);
            }
        }
    }
    let vocab = labels.iter().max().map_or(0, |m| m + 1);
    let x = Matrix::from_vec(labels.len(), cols, x).map_err(|e| AppError::format(path, e.to_string()))?;
    Dataset::new(x, labels, Dataset::numbered_labels(vocab), ImageShape::flat(cols)).map_err(|e| AppError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_header_and_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,label,b\n0,1,255\n51,0,102\n255,2,0\n").unwrap();
        let d = load_csv(&p, "label", 255.0).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels(), &[1, 0, 2]);
        assert_eq!(d.x().row(1), &[0.2, 0.4]);
        assert_eq!(d.num_classes(), 3);
    }

    #[test]
    fn errors_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "a,label\n0.5,x\n").unwrap();
        assert!(matches!(load_csv(&p, "label", 1.0), Err(AppError::Format { .. })));
        std::fs::write(&p, "a,label\n2.0,0\n").unwrap();
        assert!(matches!(load_csv(&p, "label", 1.0), Err(AppError::Format { .. })));
        assert!(matches!(load_csv(&p, "class", 1.0), Err(AppError::Format { .. })));
        std::fs::write(&p, "a,label\n0.5,0,3\n").unwrap();
        assert!(load_csv(&p, "label", 1.0).is_err());
    }
}
