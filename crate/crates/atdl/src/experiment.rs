//! The commands behind the `atdl` binary.
//!
//! Every command is a pure function of the config file, the seed and the
//! input files: work may run on several threads, but results are gathered in
//! a fixed order and every table is written in that order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use atdl_core::atdl::{compute_relations, finetune_target, screen_candidate, ScreenEntry, ScreenReport};
use atdl_core::baselines::{agrawal, classifier_from_stack, oquab, pca_logistic, BaselineKind};
use atdl_core::dataset::{split_indices, Dataset, SplitPlan};
use atdl_core::metrics::{accuracy, confusion, report, Confusion, MetricsReport};
use atdl_core::network::{Network, TrainConfig};
use atdl_core::numerics::derive_seed;
use atdl_core::sda::{finetune_source, Pretrainer, SourceModel};
use atdl_core::{Error as CoreError, Matrix, Rng};
use log::{info, warn};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{DataSource, DatasetConfig, GridPoint, LoadedConfig, Method, OUT_DIR_ENV};
use crate::error::{AppError, Result};
use crate::io;
use crate::model_file::{self, ModelFile};
use crate::report::{float_cell, metric_cell, Provenance, Table};

const SOURCE_DATA: u64 = 1;
const TARGET_DATA: u64 = 2;
const VALIDATION: u64 = 3;
const FINETUNE: u64 = 4;
const SSL_POOL: u64 = 5;

pub const SOURCE_MODEL_FILE: &str = "source.atdlnn";

/// A loaded config with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Context {
    pub loaded: LoadedConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Command-line overrides, recorded in every table header.
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub literal_sigma: bool,
}

impl Context {
    /// The output directory is `--out`, else `ATDL_OUT_DIR`, else the
    /// config's `out_dir`.
    pub fn new(mut loaded: LoadedConfig, o: &Overrides) -> Result<Self> {
        let mut overrides = Vec::new();
        let seed = match o.seed {
            Some(s) => {
                overrides.push(format!("--seed {s}"));
                s
            }
            None => loaded.config.seed,
        };
        if let Some(e) = o.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(AppError::Config(format!("--epsilon {e} must be finite and >= 0")));
            }
            loaded.config.transfer.epsilon = e;
            overrides.push(format!("--epsilon {e}"));
        }
        if o.literal_sigma {
            loaded.config.transfer.literal_sigma = true;
            overrides.push("--literal-sigma".into());
        }
        let out_dir = o
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| loaded.config.out_dir.clone());
        Ok(Self {
            loaded,
            seed,
            out_dir,
            overrides,
        })
    }

    fn provenance(&self, command: &str) -> Provenance {
        let mut command = command.to_string();
        for o in &self.overrides {
            command.push(' ');
            command.push_str(o);
        }
        Provenance {
            config_hash: self.loaded.hash.clone(),
            seed: self.seed,
            command,
        }
    }

    fn out_path(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| AppError::io(&self.out_dir, e))?;
        Ok(self.out_dir.join(name))
    }

    fn write_table(&self, name: &str, command: &str, t: &Table) -> Result<PathBuf> {
        let p = self.out_path(name)?;
        t.write_tsv(&p, &self.provenance(command))?;
        Ok(p)
    }
}

/// Tables a command produced, for printing.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<(String, Table)>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (title, t) in &self.tables {
            s.push_str(title);
            s.push('\n');
            s.push_str(&t.render());
            s.push('\n');
        }
        for f in &self.files {
            s.push_str(&format!("wrote {}\n", f.display()));
        }
        s
    }
}

fn load_raw(dc: &DatasetConfig) -> Result<Dataset> {
    match &dc.source {
        DataSource::Idx { images, labels } => io::idx::load_idx(images, labels),
        DataSource::Cifar10 { batches } => io::cifar::load_cifar10(batches),
        DataSource::Container { path } => io::container::load_container(path),
        DataSource::Csv { path, label_column, scale } => io::csv::load_csv(path, label_column, *scale),
    }
}

/// Loads a dataset and applies class selection, subsampling, grayscale and
/// resizing, in that order.
pub fn load_prepared(dc: &DatasetConfig, seed: u64, stream: u64) -> Result<Dataset> {
    let mut d = load_raw(dc)?;
    if let Some(keep) = &dc.classes {
        d = d.select_classes(keep)?;
    }
    if let Some(n) = dc.subsample {
        if n < d.len() {
            let mut idx: Vec<usize> = (0..d.len()).collect();
            Rng::new(derive_seed(seed, stream)).shuffle(&mut idx);
            idx.truncate(n);
            idx.sort_unstable();
            d = d.subset(&idx);
        }
    }
    if dc.grayscale {
        d = d.to_grayscale()?;
    }
    if let Some([h, w]) = dc.resize {
        d = d.resize(h, w)?;
    }
    if d.is_empty() {
        return Err(AppError::Config("dataset is empty after preparation".into()));
    }
    Ok(d)
}

fn source_name(dc: &DatasetConfig) -> String {
    let p = match &dc.source {
        DataSource::Idx { images, .. } => images,
        DataSource::Cifar10 { batches } => &batches[0],
        DataSource::Container { path } | DataSource::Csv { path, .. } => path,
    };
    p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub fn predict(model: &ModelFile, x: &Matrix) -> Result<Vec<usize>> {
    Ok(match model {
        ModelFile::Source(m) => argmax_rows(&m.net.predict(x)?),
        ModelFile::Target(m) => m.predict(x)?,
        ModelFile::Baseline { classifier, .. } => classifier.predict(x)?,
    })
}

/// Binary metrics when there are two classes, accuracy alone otherwise.
pub fn evaluate(pred: &[usize], truth: &[usize], classes: usize, positive: usize) -> Result<MetricsReport> {
    if classes == 2 {
        match confusion(pred, truth, Some(positive))? {
            Confusion::Binary(b) => Ok(report(&b)),
            Confusion::Multiclass(_) => unreachable!("positive label given"),
        }
    } else {
        Ok(MetricsReport {
            acc: Some(accuracy(pred, truth)?),
            ..MetricsReport::default()
        })
    }
}

fn positive_label(dc: &DatasetConfig, classes: usize) -> Result<usize> {
    let p = dc.positive_label.unwrap_or(1);
    if classes == 2 && p >= 2 {
        return Err(AppError::Config(format!("positive_label {p} is not a label of a two-class target")));
    }
    Ok(p)
}

const METRIC_HEADERS: [&str; 5] = ["ppv", "npv", "mcc", "f1", "acc"];

fn metric_cells(m: Option<&MetricsReport>) -> Vec<String> {
    match m {
        Some(m) => [m.ppv, m.npv, m.mcc, m.f1, m.acc].into_iter().map(metric_cell).collect(),
        None => vec![String::new(); 5],
    }
}

fn mean_defined(vals: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut n = 0usize;
    let mut s = 0.0;
    for v in vals {
        s += v?;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

fn mean_report(ms: &[&MetricsReport]) -> MetricsReport {
    let m = |f: fn(&MetricsReport) -> Option<f64>| mean_defined(ms.iter().map(|r| f(r)));
    MetricsReport {
        ppv: m(|r| r.ppv),
        npv: m(|r| r.npv),
        mcc: m(|r| r.mcc),
        f1: m(|r| r.f1),
        acc: m(|r| r.acc),
    }
}

/// Error text for tables, with a concrete remedy for singular covariances.
fn describe(e: &AppError, epsilon: f64) -> String {
    match e {
        AppError::Core(CoreError::Singular { .. }) => {
            let suggest = if epsilon > 0.0 { epsilon * 10.0 } else { 1e-3 };
            format!("{e} (epsilon is {epsilon}; try --epsilon {suggest})")
        }
        _ => e.to_string(),
    }
}

/// `atdl pretrain`: trains the source network and writes `source.atdlnn`.
pub fn cmd_pretrain(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.loaded.config;
    let dc = cfg.require_source()?;
    let src = load_prepared(dc, ctx.seed, SOURCE_DATA)?;
    info!(
        "source: {} rows, {} features, {} labels",
        src.len(),
        src.x().cols(),
        src.num_classes()
    );
    let sda = cfg.sda_settings(ctx.seed)?;
    let pre = Pretrainer {
        corruption: sda.corruption,
        tied_weights: cfg.corruption.tied_weights,
    };
    let stack = pre.stack(src.x(), &sda.hidden_dims, &sda.pretrain)?;
    for (i, t) in stack.loss_traces.iter().enumerate() {
        info!("pretrained layer {}: final reconstruction loss {:?}", i + 1, t.last());
    }
    let ft = cfg.source_finetune.train_config(ctx.seed)?;
    let provenance = format!("source={} config={} seed={}", source_name(dc), ctx.loaded.short_hash(), ctx.seed);
    let (model, trace) = finetune_source(
        stack.network,
        src.x(),
        &src.one_hot(),
        &ft,
        cfg.network.output.into(),
        src.label_names().to_vec(),
        provenance,
    )?;
    let train_acc = accuracy(&argmax_rows(&model.net.predict(src.x())?), src.labels())?;
    info!(
        "source fine-tuning: final loss {:?}, training accuracy {train_acc:.4}",
        trace.last()
    );

    let mut traces = Table::new(["stage", "epoch", "loss"]);
    for (i, t) in stack.loss_traces.iter().enumerate() {
        for (e, v) in t.iter().enumerate() {
            traces.push(vec![format!("pretrain_layer_{}", i + 1), (e + 1).to_string(), float_cell(*v)]);
        }
    }
    for (e, v) in trace.iter().enumerate() {
        traces.push(vec!["finetune".into(), (e + 1).to_string(), float_cell(*v)]);
    }
    let mut summary = Table::new(["layer_dims", "source_rows", "train_acc"]);
    let mut dims = vec![model.net.input_dim().to_string()];
    dims.extend(model.net.specs().iter().map(|s| s.out_dim.to_string()));
    summary.push(vec![dims.join("-"), src.len().to_string(), metric_cell(Some(train_acc))]);

    let model_path = ctx.out_path(SOURCE_MODEL_FILE)?;
    model_file::save(&ModelFile::Source(model), &model_path)?;
    let trace_path = ctx.write_table("pretrain_trace.tsv", "pretrain", &traces)?;
    let summary_path = ctx.write_table("pretrain_summary.tsv", "pretrain", &summary)?;
    Ok(Outcome {
        tables: vec![("source model".into(), summary)],
        files: vec![model_path, summary_path, trace_path],
    })
}

/// Target rows for one fold. `fit` trains, `val` (when configured) selects
/// the grid point, `test` is reported.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub index: usize,
    pub fit: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

struct Target {
    data: Dataset,
    folds: Vec<FoldData>,
    split_hash: String,
    positive: usize,
}

fn hash_indices(h: &mut Sha256, tag: &[u8], idx: &[usize]) {
    h.update(tag);
    h.update((idx.len() as u64).to_le_bytes());
    for &i in idx {
        h.update((i as u64).to_le_bytes());
    }
}

fn prepare_target(ctx: &Context, validation: Option<f64>) -> Result<Target> {
    let cfg = &ctx.loaded.config;
    let dc = cfg.require_target()?;
    let data = load_prepared(dc, ctx.seed, TARGET_DATA)?;
    let k = data.num_classes();
    let positive = positive_label(dc, k)?;
    let plan = cfg.split.plan(k, ctx.seed)?;
    let folds = split_indices(data.labels(), k, &plan)?;
    let mut h = Sha256::new();
    let mut out = Vec::with_capacity(folds.len());
    for (i, f) in folds.iter().enumerate() {
        let (fit_idx, val_idx) = match validation {
            None => (f.train.clone(), None),
            Some(frac) => {
                let train_labels: Vec<usize> = f.train.iter().map(|&r| data.labels()[r]).collect();
                let inner = split_indices(
                    &train_labels,
                    k,
                    &SplitPlan::holdout(frac, derive_seed(plan.seed, VALIDATION + i as u64)),
                )?;
                let map = |v: &[usize]| v.iter().map(|&j| f.train[j]).collect::<Vec<_>>();
                (map(&inner[0].train), Some(map(&inner[0].test)))
            }
        };
        hash_indices(&mut h, b"fit", &fit_idx);
        if let Some(v) = &val_idx {
            hash_indices(&mut h, b"val", v);
        }
        hash_indices(&mut h, b"test", &f.test);
        out.push(FoldData {
            index: i,
            fit: data.subset(&fit_idx),
            val: val_idx.map(|v| data.subset(&v)),
            test: data.subset(&f.test),
        });
    }
    let split_hash: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    info!(
        "target: {} rows, {k} labels, {} folds, split sha256 {}",
        data.len(),
        out.len(),
        &split_hash[..16]
    );
    Ok(Target {
        data,
        folds: out,
        split_hash,
        positive,
    })
}

#[derive(Debug, Clone, PartialEq)]
struct Record {
    point: GridPoint,
    fold: usize,
    n_fit: usize,
    n_test: usize,
    metrics: Option<MetricsReport>,
    val_acc: Option<f64>,
    final_loss: Option<f64>,
    error: Option<String>,
}

struct MethodResult {
    method: Method,
    records: Vec<Record>,
    /// Selected grid point, its mean selection score and its fold-0 model.
    best: Option<(GridPoint, f64, ModelFile)>,
    error: Option<String>,
}

fn fine_tune_config(ctx: &Context, p: &GridPoint, fold: usize) -> Result<TrainConfig> {
    ctx.loaded
        .config
        .finetune
        .train_config(p, derive_seed(ctx.seed, FINETUNE + fold as u64))
}

fn run_grid<F>(ctx: &Context, method: Method, target: &Target, fit: F) -> Result<MethodResult>
where
    F: Fn(&FoldData, &TrainConfig) -> Result<(ModelFile, Vec<f64>)> + Sync,
{
    let points = ctx.loaded.config.finetune.points()?;
    let k = target.data.num_classes();
    let eps = ctx.loaded.config.transfer.epsilon;
    let jobs: Vec<(usize, &FoldData)> = (0..points.len()).flat_map(|p| target.folds.iter().map(move |f| (p, f))).collect();
    let results: Vec<(Record, Option<ModelFile>)> = jobs
        .par_iter()
        .map(|&(pi, f)| {
            let point = points[pi];
            let mut rec = Record {
                point,
                fold: f.index,
                n_fit: f.fit.len(),
                n_test: f.test.len(),
                metrics: None,
                val_acc: None,
                final_loss: None,
                error: None,
            };
            let run = || -> Result<(MetricsReport, Option<f64>, Option<f64>, ModelFile)> {
                let tc = fine_tune_config(ctx, &point, f.index)?;
                let (model, trace) = fit(f, &tc)?;
                let pred = predict(&model, f.test.x())?;
                let m = evaluate(&pred, f.test.labels(), k, target.positive)?;
                let val = match &f.val {
                    Some(v) => Some(accuracy(&predict(&model, v.x())?, v.labels())?),
                    None => None,
                };
                Ok((m, val, trace.last().copied(), model))
            };
            match run() {
                Ok((m, val, loss, model)) => {
                    rec.metrics = Some(m);
                    rec.val_acc = val;
                    rec.final_loss = loss;
                    (rec, Some(model))
                }
                Err(e) => {
                    rec.error = Some(describe(&e, eps));
                    (rec, None)
                }
            }
        })
        .collect();

    let folds = target.folds.len();
    let use_val = target.folds.iter().all(|f| f.val.is_some());
    let mut best: Option<(usize, f64)> = None;
    for (pi, chunk) in results.chunks(folds).enumerate() {
        let score = mean_defined(
            chunk
                .iter()
                .map(|(r, _)| if use_val { r.val_acc } else { r.metrics.and_then(|m| m.acc) }),
        );
        if let Some(s) = score {
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((pi, s));
            }
        }
    }
    let error = match best {
        Some(_) => None,
        None => Some(
            results
                .iter()
                .find_map(|(r, _)| r.error.clone())
                .unwrap_or_else(|| "no grid point evaluated".into()),
        ),
    };
    let mut records = Vec::with_capacity(results.len());
    let mut chosen = None;
    for (i, (r, m)) in results.into_iter().enumerate() {
        if let (Some((pi, s)), Some(m)) = (best, m) {
            if i == pi * folds {
                chosen = Some((points[pi], s, m));
            }
        }
        records.push(r);
    }
    if let Some((p, s, _)) = &chosen {
        info!(
            "{}: selected learning rate {}, momentum {}, minibatch {} (score {s:.4})",
            method.name(),
            p.learning_rate,
            p.momentum,
            p.minibatch
        );
    }
    Ok(MethodResult {
        method,
        records,
        best: chosen,
        error,
    })
}

fn load_source_model(path: &Path) -> Result<SourceModel> {
    model_file::load(path)?.into_source(path)
}

/// Pretrains one stack per fold, on the rows `pool` picks for that fold.
fn fold_stacks(ctx: &Context, target: &Target, pool: impl Fn(&FoldData) -> Result<Matrix> + Sync) -> Vec<Result<Network>> {
    let cfg = &ctx.loaded.config;
    target
        .folds
        .par_iter()
        .map(|f| {
            let sda = cfg.sda_settings(ctx.seed)?;
            let pre = Pretrainer {
                corruption: sda.corruption,
                tied_weights: cfg.corruption.tied_weights,
            };
            Ok(pre.stack(&pool(f)?, &sda.hidden_dims, &sda.pretrain)?.network)
        })
        .collect()
}

fn stack_for(stacks: &[Result<Network>], f: &FoldData) -> Result<Network> {
    match &stacks[f.index] {
        Ok(n) => Ok(n.clone()),
        Err(e) => Err(AppError::Config(format!("pretraining failed: {e}"))),
    }
}

fn run_method(
    ctx: &Context,
    method: Method,
    target: &Target,
    source: Option<&SourceModel>,
    source_rows: Option<&Matrix>,
) -> Result<MethodResult> {
    let cfg = &ctx.loaded.config;
    let k = target.data.num_classes();
    let names = target.data.label_names().to_vec();
    let fail = |msg: String| MethodResult {
        method,
        records: Vec::new(),
        best: None,
        error: Some(msg),
    };
    if method.needs_source_model() && source.is_none() {
        return Ok(fail(format!("{} needs a source model", method.name())));
    }
    let baseline = |kind: BaselineKind, c: atdl_core::baselines::Classifier, trace: Vec<f64>| {
        debug_assert_eq!(c.kind, kind);
        (
            ModelFile::Baseline {
                classifier: c,
                label_names: names.clone(),
            },
            trace,
        )
    };
    match method {
        Method::Atdl => {
            let src = source.expect("checked above");
            let opts = cfg.transfer.options();
            run_grid(ctx, method, target, |f, tc| {
                let rel = compute_relations(src, f.fit.x(), f.fit.labels(), k, &opts.relation)?;
                let (m, trace) = finetune_target(src, &rel, f.fit.x(), f.fit.labels(), names.clone(), tc, &opts)?;
                Ok((ModelFile::Target(m), trace))
            })
        }
        Method::NonTransfer => {
            let stacks = fold_stacks(ctx, target, |f| Ok(f.fit.x().clone()));
            run_grid(ctx, method, target, |f, tc| {
                let (c, t) = classifier_from_stack(BaselineKind::NonTransfer, stack_for(&stacks, f)?, f.fit.x(), f.fit.labels(), k, tc)?;
                Ok(baseline(BaselineKind::NonTransfer, c, t))
            })
        }
        Method::Ssl => {
            let Some(xs) = source_rows else {
                return Ok(fail("ssl needs a [source] dataset".into()));
            };
            let stacks = fold_stacks(ctx, target, |f| Ok(xs.vstack(f.fit.x())?));
            run_grid(ctx, method, target, |f, tc| {
                let (c, t) = classifier_from_stack(BaselineKind::Ssl, stack_for(&stacks, f)?, f.fit.x(), f.fit.labels(), k, tc)?;
                Ok(baseline(BaselineKind::Ssl, c, t))
            })
        }
        Method::Agrawal => {
            let src = source.expect("checked above");
            run_grid(ctx, method, target, |f, tc| {
                let (c, t) = agrawal(src, f.fit.x(), f.fit.labels(), k, tc)?;
                Ok(baseline(BaselineKind::Agrawal, c, t))
            })
        }
        Method::Oquab => {
            let src = source.expect("checked above");
            let adapt = cfg.baselines.oquab_adapt_dim;
            run_grid(ctx, method, target, |f, tc| {
                let (c, t) = oquab(src, f.fit.x(), f.fit.labels(), k, adapt, tc)?;
                let kind = c.kind;
                Ok(baseline(kind, c, t))
            })
        }
        Method::PcaLogistic => {
            let energy = cfg.baselines.pca_energy;
            run_grid(ctx, method, target, |f, tc| {
                let (c, t) = pca_logistic(f.fit.x(), f.fit.labels(), k, energy, tc)?;
                Ok(baseline(BaselineKind::PcaLogistic, c, t))
            })
        }
    }
}

fn fold_table(results: &[MethodResult]) -> Table {
    let mut headers = vec!["method", "learning_rate", "momentum", "minibatch", "fold", "n_train", "n_test"];
    headers.extend(METRIC_HEADERS);
    headers.extend(["val_acc", "final_loss", "error"]);
    let mut t = Table::new(headers);
    for r in results {
        for rec in &r.records {
            let mut row = vec![
                r.method.name().to_string(),
                float_cell(rec.point.learning_rate),
                float_cell(rec.point.momentum),
                rec.point.minibatch.to_string(),
                (rec.fold + 1).to_string(),
                rec.n_fit.to_string(),
                rec.n_test.to_string(),
            ];
            row.extend(metric_cells(rec.metrics.as_ref()));
            row.push(metric_cell(rec.val_acc));
            row.push(rec.final_loss.map_or_else(String::new, |v| format!("{v:.6}")));
            row.push(rec.error.clone().unwrap_or_default());
            t.push(row);
        }
    }
    t
}

fn summary_table(results: &[MethodResult]) -> Table {
    let mut headers = vec!["method", "learning_rate", "momentum", "minibatch", "selection_score"];
    headers.extend(METRIC_HEADERS);
    headers.push("error");
    let mut t = Table::new(headers);
    for r in results {
        let mut row = vec![r.method.name().to_string()];
        match &r.best {
            Some((p, score, _)) => {
                let ms: Vec<&MetricsReport> = r
                    .records
                    .iter()
                    .filter(|rec| rec.point == *p)
                    .filter_map(|rec| rec.metrics.as_ref())
                    .collect();
                row.extend([
                    float_cell(p.learning_rate),
                    float_cell(p.momentum),
                    p.minibatch.to_string(),
                    metric_cell(Some(*score)),
                ]);
                row.extend(metric_cells(Some(&mean_report(&ms))));
            }
            None => row.extend(vec![String::new(); 4 + METRIC_HEADERS.len()]),
        }
        row.push(r.error.clone().unwrap_or_default());
        t.push(row);
    }
    t
}

/// Mean test metrics of the selected grid point, per method.
pub fn selected_metrics(summary: &Table, method: Method) -> Option<MetricsReport> {
    let row = summary.rows.iter().find(|r| r[0] == method.name())?;
    let cell = |name: &str| {
        let i = summary.headers.iter().position(|h| h == name)?;
        row[i].parse::<f64>().ok()
    };
    Some(MetricsReport {
        ppv: cell("ppv"),
        npv: cell("npv"),
        mcc: cell("mcc"),
        f1: cell("f1"),
        acc: cell("acc"),
    })
}

fn run_methods(ctx: &Context, command: &str, methods: &[Method], source_model: Option<&Path>) -> Result<Outcome> {
    let cfg = &ctx.loaded.config;
    let target = prepare_target(ctx, cfg.selection.validation_fraction)?;
    let source = source_model.map(load_source_model).transpose()?;
    let source_rows = if methods.contains(&Method::Ssl) {
        match &cfg.source {
            Some(dc) => {
                let d = load_prepared(dc, ctx.seed, SOURCE_DATA)?;
                let mut idx: Vec<usize> = (0..d.len()).collect();
                if let Some(n) = cfg.baselines.ssl_source_rows {
                    Rng::new(derive_seed(ctx.seed, SSL_POOL)).shuffle(&mut idx);
                    idx.truncate(n);
                    idx.sort_unstable();
                }
                Some(d.x().select_rows(&idx))
            }
            None => None,
        }
    } else {
        None
    };
    let mut results = Vec::with_capacity(methods.len());
    for &m in methods {
        info!("{command}: running {}", m.name());
        let r = run_method(ctx, m, &target, source.as_ref(), source_rows.as_ref())?;
        if let Some(e) = &r.error {
            warn!("{}: {e}", m.name());
        }
        results.push(r);
    }

    let mut prov = ctx.provenance(command);
    prov.command.push_str(&format!(" split_sha256={}", target.split_hash));
    let folds = fold_table(&results);
    let summary = summary_table(&results);
    let mut files = Vec::new();
    for (name, t) in [
        (format!("{command}_folds.tsv"), &folds),
        (format!("{command}_summary.tsv"), &summary),
    ] {
        let p = ctx.out_path(&name)?;
        t.write_tsv(&p, &prov)?;
        files.push(p);
    }
    for r in &results {
        if let Some((_, _, model)) = &r.best {
            let p = ctx.out_path(&format!("{command}_{}.atdlnn", r.method.name()))?;
            model_file::save(model, &p)?;
            files.push(p);
        }
    }
    if results.iter().all(|r| r.best.is_none()) {
        let msg = results.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(AppError::Config(format!("every method failed; first error: {msg}")));
    }
    Ok(Outcome {
        tables: vec![(format!("{command}: selected grid points, mean over folds"), summary)],
        files,
    })
}

pub fn default_source_model(ctx: &Context) -> PathBuf {
    ctx.out_dir.join(SOURCE_MODEL_FILE)
}

/// `atdl transfer`: ATDL over the fine-tuning grid and every fold.
pub fn cmd_transfer(ctx: &Context, source_model: &Path) -> Result<Outcome> {
    run_methods(ctx, "transfer", &[Method::Atdl], Some(source_model))
}

/// `atdl baselines`: the configured comparison methods on the same folds and
/// grid as `transfer`.
pub fn cmd_baselines(ctx: &Context, source_model: Option<&Path>) -> Result<Outcome> {
    let methods: Vec<Method> = ctx
        .loaded
        .config
        .baselines
        .methods
        .iter()
        .copied()
        .filter(|&m| m != Method::Atdl)
        .collect();
    if methods.is_empty() {
        return Err(AppError::Config("no baseline methods configured".into()));
    }
    run_methods(ctx, "baselines", &methods, source_model)
}

/// Two-sided p-value of a Pearson correlation `r` over `n` pairs, from the
/// Student t distribution with `n - 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 || !r.is_finite() {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * dist.sf(t.abs())).min(1.0))
}

/// Candidate model files in a directory, by file name.
pub fn candidate_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| AppError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| AppError::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e == "atdlnn") {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(AppError::Config(format!("{}: no .atdlnn candidate models", dir.display())));
    }
    Ok(out)
}

/// `atdl screen`: ranks candidate sources by the separation of their relation
/// vectors on each fold's training rows (averaged over folds). With
/// `with_performance`, each candidate is also fine-tuned at the first grid
/// point and its mean test accuracy correlated with the separation.
pub fn cmd_screen(ctx: &Context, dir: &Path, with_performance: bool) -> Result<Outcome> {
    let cfg = &ctx.loaded.config;
    let files = candidate_files(dir)?;
    let target = prepare_target(ctx, None)?;
    let k = target.data.num_classes();
    let opts = cfg.transfer.options();
    let point = cfg.finetune.points()?[0];
    let eps = cfg.transfer.epsilon;
    let names = target.data.label_names().to_vec();

    let scored: Vec<(ScreenEntry, Option<String>)> = files
        .par_iter()
        .map(|p| {
            let id = p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            let src = match load_source_model(p) {
                Ok(s) => s,
                Err(e) => {
                    let entry = ScreenEntry {
                        source_id: id,
                        separation: Err(CoreError::InvalidArgument(format!("unreadable candidate: {e}"))),
                        performance: None,
                        rank: None,
                    };
                    return (entry, None);
                }
            };
            let seps: std::result::Result<Vec<f64>, CoreError> = target
                .folds
                .iter()
                .map(|f| screen_candidate(&src, f.fit.x(), f.fit.labels(), k, &opts.relation))
                .collect();
            let separation = seps.map(|v| v.iter().sum::<f64>() / v.len() as f64);
            let mut perf_err = None;
            let performance = if with_performance && separation.is_ok() {
                let run = || -> Result<f64> {
                    let mut accs = Vec::new();
                    for f in &target.folds {
                        let tc = fine_tune_config(ctx, &point, f.index)?;
                        let rel = compute_relations(&src, f.fit.x(), f.fit.labels(), k, &opts.relation)?;
                        let (m, _) = finetune_target(&src, &rel, f.fit.x(), f.fit.labels(), names.clone(), &tc, &opts)?;
                        accs.push(accuracy(&m.predict(f.test.x())?, f.test.labels())?);
                    }
                    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
                };
                match run() {
                    Ok(a) => Some(a),
                    Err(e) => {
                        perf_err = Some(describe(&e, eps));
                        None
                    }
                }
            } else {
                None
            };
            let entry = ScreenEntry {
                source_id: id,
                separation,
                performance,
                rank: None,
            };
            (entry, perf_err)
        })
        .collect();

    let perf: BTreeMap<String, Option<f64>> = scored.iter().map(|(e, _)| (e.source_id.clone(), e.performance)).collect();
    let perf_errors: BTreeMap<String, String> = scored
        .iter()
        .filter_map(|(e, m)| m.clone().map(|m| (e.source_id.clone(), m)))
        .collect();
    let mut report = ScreenReport::from_entries(scored.into_iter().map(|(e, _)| e).collect());
    let correlation = if with_performance {
        match report.attach_performance(|id| perf.get(id).copied().flatten()) {
            Ok(r) => Some(r),
            Err(e) => {
                warn!("correlation: {e}");
                None
            }
        }
    } else {
        None
    };

    let mut t = Table::new(["rank", "source", "separation", "accuracy", "error"]);
    for e in &report.entries {
        let err = match &e.separation {
            Err(err) => err.to_string(),
            Ok(_) => perf_errors.get(&e.source_id).cloned().unwrap_or_default(),
        };
        t.push(vec![
            e.rank.map_or_else(String::new, |r| r.to_string()),
            e.source_id.clone(),
            e.separation.as_ref().map_or_else(|_| String::new(), |s| format!("{s:.6}")),
            metric_cell(e.performance),
            err,
        ]);
    }
    let mut prov = ctx.provenance("screen");
    prov.command.push_str(&format!(" split_sha256={}", target.split_hash));
    let mut files_out = Vec::new();
    let p = ctx.out_path("screen.tsv")?;
    t.write_tsv(&p, &prov)?;
    files_out.push(p);
    let mut tables = vec![("candidate sources by separation".to_string(), t)];
    if with_performance {
        let pairs = report.pairs().len();
        let mut s = Table::new(["candidates", "pairs", "pearson_r", "p_value"]);
        s.push(vec![
            report.entries.len().to_string(),
            pairs.to_string(),
            correlation.map_or_else(String::new, |r| format!("{r:.4}")),
            correlation
                .and_then(|r| correlation_p_value(r, pairs))
                .map_or_else(String::new, |p| format!("{p:.4}")),
        ]);
        let p = ctx.out_path("screen_summary.tsv")?;
        s.write_tsv(&p, &prov)?;
        files_out.push(p);
        tables.push(("separation vs accuracy".into(), s));
    }
    Ok(Outcome { tables, files: files_out })
}

/// Input kinds `atdl convert` understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvertKind {
    Idx,
    Cifar10,
    Csv,
}

/// `atdl convert`: writes any supported input as a dataset container.
pub fn cmd_convert(kind: ConvertKind, inputs: &[PathBuf], out: &Path, label_column: &str, scale: f64) -> Result<Outcome> {
    let d = match kind {
        ConvertKind::Idx => match inputs {
            [images, labels] => io::idx::load_idx(images, labels)?,
            _ => return Err(AppError::Config("idx conversion takes an images file and a labels file".into())),
        },
        ConvertKind::Cifar10 if !inputs.is_empty() => io::cifar::load_cifar10(inputs)?,
        ConvertKind::Csv => match inputs {
            [path] => io::csv::load_csv(path, label_column, scale)?,
            _ => return Err(AppError::Config("csv conversion takes exactly one file".into())),
        },
        ConvertKind::Cifar10 => return Err(AppError::Config("cifar10 conversion needs at least one batch file".into())),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    io::container::save_container(&d, out)?;
    let s = d.shape();
    let mut t = Table::new(["rows", "features", "height", "width", "channels", "labels"]);
    t.push(vec![
        d.len().to_string(),
        d.x().cols().to_string(),
        s.height.to_string(),
        s.width.to_string(),
        s.channels.to_string(),
        d.num_classes().to_string(),
    ]);
    Ok(Outcome {
        tables: vec![("container".into(), t)],
        files: vec![out.to_path_buf()],
    })
}

/// `atdl eval`: applies a saved model to every row of the prepared target.
pub fn cmd_eval(ctx: &Context, model_path: &Path) -> Result<Outcome> {
    let cfg = &ctx.loaded.config;
    let model = model_file::load(model_path)?;
    let dc = cfg.require_target()?;
    let data = load_prepared(dc, ctx.seed, TARGET_DATA)?;
    let k = data.num_classes();
    let pred = predict(&model, data.x())?;
    let m = evaluate(&pred, data.labels(), k, positive_label(dc, k)?)?;
    let mut headers = vec!["model", "kind", "rows"];
    headers.extend(METRIC_HEADERS);
    let mut t = Table::new(headers);
    let mut row = vec![
        model_path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        model.kind_name().to_string(),
        data.len().to_string(),
    ];
    row.extend(metric_cells(Some(&m)));
    t.push(row);
    let p = ctx.write_table("eval.tsv", "eval", &t)?;
    Ok(Outcome {
        tables: vec![("evaluation".into(), t)],
        files: vec![p],
    })
}
