//! Binary model files.
//!
//! ```text
//! "ATDLNN01"
//! u32 version = 1
//! u32 kind                1 source, 2 transfer target, 3 baseline classifier
//! u32 baseline tag        0 unless kind = 3
//! u32 adaptation width    0 unless the baseline is Oquab
//! u32 loss tag, u32 distance form tag
//! u32 layer count, then per layer u32 in, u32 out, u32 activation tag
//! per layer f64 weights[out * in] (row-major), f64 bias[out]
//! u32 relation flag, then if set:
//!     u32 labels, u32 dim, per label u64 count, f64 ridge, f64 r[dim], f64 Σ[dim * dim]
//! u32 PCA flag, then if set:
//!     u32 dims, u32 axes, f64 mean[dims], f64 axes[axes * dims], f64 variance[axes]
//! string provenance
//! u32 label count, then that many strings
//! u64 checksum            sum of every preceding byte, wrapping
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Everything is
//! little-endian; parameters are stored at full precision so a load followed
//! by a save reproduces the file exactly.

use std::path::Path;

use atdl_core::atdl::{DistanceForm, RelationSet, TargetModel};
use atdl_core::baselines::{BaselineKind, Classifier};
use atdl_core::network::{Activation, Layer, LossKind, Network};
use atdl_core::numerics::PcaModel;
use atdl_core::sda::SourceModel;
use atdl_core::Matrix;

use crate::error::{AppError, Result};
use crate::io::container::byte_sum;

pub const MAGIC: &[u8; 8] = b"ATDLNN01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Source(SourceModel),
    Target(TargetModel),
    Baseline { classifier: Classifier, label_names: Vec<String> },
}

impl ModelFile {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelFile::Source(_) => "source",
            ModelFile::Target(_) => "atdl",
            ModelFile::Baseline { classifier, .. } => classifier.kind.name(),
        }
    }

    pub fn network(&self) -> &Network {
        match self {
            ModelFile::Source(m) => &m.net,
            ModelFile::Target(m) => &m.net,
            ModelFile::Baseline { classifier, .. } => &classifier.net,
        }
    }

    pub fn into_source(self, path: &Path) -> Result<SourceModel> {
        match self {
            ModelFile::Source(m) => Ok(m),
            other => Err(AppError::format(
                path,
                format!("expected a source model, found {}", other.kind_name()),
            )),
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.at))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
    fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "string is not UTF-8".to_string())
    }
}

pub fn encode(model: &ModelFile) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let (kind, tag, adapt, loss, form) = match model {
        ModelFile::Source(m) => (1, 0, 0, m.output().loss(), DistanceForm::Inverse),
        ModelFile::Target(m) => (2, 0, 0, LossKind::VarianceToTargets, m.form),
        ModelFile::Baseline { classifier, .. } => {
            let adapt = match classifier.kind {
                BaselineKind::Oquab { adapt_dim } => adapt_dim,
                _ => 0,
            };
            (
                3,
                classifier.kind.tag() as usize,
                adapt,
                LossKind::CrossEntropy,
                DistanceForm::Inverse,
            )
        }
    };
    for v in [kind, tag, adapt, loss.tag() as usize, form.tag() as usize] {
        w.u32(v);
    }
    let net = model.network();
    w.u32(net.depth());
    for l in net.layers() {
        let s = l.spec();
        w.u32(s.in_dim);
        w.u32(s.out_dim);
        w.u32(s.activation.tag() as usize);
    }
    for l in net.layers() {
        w.f64s(l.weights().as_slice());
        w.f64s(l.bias());
    }
    match model {
        ModelFile::Target(m) => {
            let r = &m.relations;
            w.u32(1);
            w.u32(r.num_labels());
            w.u32(r.dim());
            for l in 0..r.num_labels() {
                w.u64(r.counts()[l] as u64);
                w.f64s(&[r.regularizers()[l]]);
                w.f64s(r.relation(l));
                w.f64s(r.covariances()[l].as_slice());
            }
        }
        _ => w.u32(0),
    }
    match model {
        ModelFile::Baseline {
            classifier: Classifier { pca: Some(p), .. },
            ..
        } => {
            w.u32(1);
            w.u32(p.dims());
            w.u32(p.components.rows());
            w.f64s(&p.mean);
            w.f64s(p.components.as_slice());
            w.f64s(&p.explained_variance);
        }
        _ => w.u32(0),
    }
    let (provenance, names): (&str, &[String]) = match model {
        ModelFile::Source(m) => (&m.provenance, &m.label_names),
        ModelFile::Target(m) => (&m.source_provenance, &m.label_names),
        ModelFile::Baseline { label_names, .. } => ("", label_names),
    };
    w.str(provenance);
    w.u32(names.len());
    for n in names {
        w.str(n);
    }
    let sum = byte_sum(&w.0);
    w.u64(sum);
    w.0
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ModelFile, String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("not a model file (bad magic)".into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if stored != byte_sum(body) {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { bytes: body, at: 8 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(format!("unsupported version {version}"));
    }
    let (kind, tag, adapt, loss_tag, form_tag) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let loss = LossKind::from_tag(loss_tag as u32).ok_or_else(|| format!("unknown loss tag {loss_tag}"))?;
    let form = DistanceForm::from_tag(form_tag as u32).ok_or_else(|| format!("unknown distance tag {form_tag}"))?;
    let depth = r.u32()?;
    let mut specs = Vec::with_capacity(depth.min(1024));
    for _ in 0..depth {
        let (i, o, a) = (r.u32()?, r.u32()?, r.u32()?);
        let act = Activation::from_tag(a as u32).ok_or_else(|| format!("unknown activation tag {a}"))?;
        specs.push((i, o, act));
    }
    let mut layers = Vec::with_capacity(depth.min(1024));
    for &(i, o, act) in &specs {
        let w = Matrix::from_vec(o, i, r.f64s(i.checked_mul(o).ok_or("layer size overflow")?)?).map_err(|e| e.to_string())?;
        let b = r.f64s(o)?;
        layers.push(Layer::new(w, b, act).map_err(|e| e.to_string())?);
    }
    let net = Network::from_layers(layers).map_err(|e| e.to_string())?;
    if loss.check_output(net.output_activation()).is_err() {
        return Err(format!("loss {loss:?} does not fit a {:?} output", net.output_activation()));
    }

    let relations = match r.u32()? {
        0 => None,
        1 => {
            let (k, d) = (r.u32()?, r.u32()?);
            let (mut rel, mut cov, mut counts, mut eps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for _ in 0..k {
                counts.push(r.u64()? as usize);
                eps.push(r.f64s(1)?[0]);
                rel.push(r.f64s(d)?);
                cov.push(Matrix::from_vec(d, d, r.f64s(d.checked_mul(d).ok_or("covariance size overflow")?)?).map_err(|e| e.to_string())?);
            }
            Some(RelationSet::new(rel, cov, counts, eps).map_err(|e| e.to_string())?)
        }
        f => return Err(format!("bad relation flag {f}")),
    };
    let pca = match r.u32()? {
        0 => None,
        1 => {
            let (d, k) = (r.u32()?, r.u32()?);
            let mean = r.f64s(d)?;
            let components = Matrix::from_vec(k, d, r.f64s(k.checked_mul(d).ok_or("PCA size overflow")?)?).map_err(|e| e.to_string())?;
            let explained_variance = r.f64s(k)?;
            Some(PcaModel {
                mean,
                components,
                explained_variance,
            })
        }
        f => return Err(format!("bad PCA flag {f}")),
    };
    let provenance = r.str()?;
    let n_names = r.u32()?;
    let mut names = Vec::with_capacity(n_names.min(1 << 16));
    for _ in 0..n_names {
        names.push(r.str()?);
    }
    if r.at != body.len() {
        return Err(format!("{} trailing bytes", body.len() - r.at));
    }

    let model = match kind {
        1 => {
            let m = SourceModel::new(net, names, provenance).map_err(|e| e.to_string())?;
            if m.output().loss() != loss {
                return Err("source loss tag disagrees with its output layer".into());
            }
            ModelFile::Source(m)
        }
        2 => {
            let rel = relations.ok_or("target model without relation vectors")?;
            ModelFile::Target(TargetModel::new(net, rel, form, names, provenance).map_err(|e| e.to_string())?)
        }
        3 => {
            let kind = BaselineKind::from_tag(tag as u32, adapt).ok_or_else(|| format!("unknown baseline tag {tag}"))?;
            let classifier = Classifier::new(kind, net, pca).map_err(|e| e.to_string())?;
            ModelFile::Baseline {
                classifier,
                label_names: names,
            }
        }
        k => return Err(format!("unknown model kind {k}")),
    };
    Ok(model)
}

pub fn save(model: &ModelFile, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelFile> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|m| AppError::format(path, m))
}
