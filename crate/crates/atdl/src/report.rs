//! Result tables: aligned text for the terminal and TSV files on disk.
//!
//! Every TSV starts with `# ` lines naming the tool version, config hash and
//! seed. Undefined metrics are written as empty cells.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AppError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
}

impl Provenance {
    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!("# atdl {}", env!("CARGO_PKG_VERSION")),
            format!("# command {}", self.command),
            format!("# config_sha256 {}", self.config_hash),
            format!("# seed {}", self.seed),
        ]
    }
}

/// Fixed-precision cell for a metric; `None` becomes an empty cell.
pub fn metric_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

pub fn float_cell(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.headers.len(), "row width differs from header");
        self.rows.push(row);
    }

    /// Left-aligned columns separated by two spaces.
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let mut s = String::new();
            for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
                if i > 0 {
                    s.push_str("  ");
                }
                let _ = write!(s, "{c:<w$}");
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        line(&mut out, &self.headers);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, &rule);
        for r in &self.rows {
            line(&mut out, r);
        }
        out
    }

    pub fn to_tsv(&self, provenance: &Provenance) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        for l in provenance.header_lines() {
            buf.extend_from_slice(l.as_bytes());
            buf.push(b'\n');
        }
        let mut w = ::csv::WriterBuilder::new()
            .delimiter(b'\t')
            .quote_style(::csv::QuoteStyle::Necessary)
            .from_writer(buf);
        let tsv_err = |e: ::csv::Error| AppError::Config(format!("tsv: {e}"));
        w.write_record(&self.headers).map_err(tsv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(tsv_err)?;
        }
        w.into_inner().map_err(|e| AppError::Config(format!("tsv: {e}")))
    }

    pub fn write_tsv(&self, path: &Path, provenance: &Provenance) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        }
        std::fs::write(path, self.to_tsv(provenance)?).map_err(|e| AppError::io(path, e))
    }
}

/// Reads a TSV written by [`Table::write_tsv`], skipping `#` lines.
pub fn read_tsv(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = ::csv::ReaderBuilder::new().delimiter(b'\t').from_reader(body.as_bytes());
    let headers = r
        .headers()
        .map_err(|e| AppError::format(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut t = Table { headers, rows: Vec::new() };
    for rec in r.records() {
        let rec = rec.map_err(|e| AppError::format(path, e.to_string()))?;
        t.rows.push(rec.iter().map(String::from).collect());
    }
    Ok(t)
}
