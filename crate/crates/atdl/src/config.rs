//! Experiment configuration files (TOML).
//!
//! Relative dataset paths resolve against the directory holding the config
//! file. The only environment override is `ATDL_OUT_DIR` for the output
//! directory; `--out` on the command line wins over both.

use std::path::{Path, PathBuf};

use atdl_core::atdl::{CovarianceMode, DistanceForm, Regularization, RelationOptions, TransferOptions};
use atdl_core::baselines::{BaselineKind, SdaSettings};
use atdl_core::dataset::{SplitKind, SplitPlan};
use atdl_core::network::{LrDecay, TrainConfig};
use atdl_core::sda::{CorruptionKind, CorruptionSpec, SourceOutput};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const OUT_DIR_ENV: &str = "ATDL_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub source: Option<DatasetConfig>,
    pub target: Option<DatasetConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub corruption: CorruptionConfig,
    #[serde(default = "default_pretrain")]
    pub pretrain: TrainSection,
    #[serde(default = "default_source_finetune")]
    pub source_finetune: TrainSection,
    #[serde(default)]
    pub finetune: GridConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub baselines: BaselinesConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Idx { images: PathBuf, labels: PathBuf },
    Cifar10 { batches: Vec<PathBuf> },
    Container { path: PathBuf },
    Csv { path: PathBuf, label_column: String, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Idx,
    Cifar10,
    Container,
    Csv,
}

/// Where a dataset comes from and how it is prepared. Steps apply in the
/// order: class selection, subsampling, grayscale, resize.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct DatasetConfig {
    pub source: DataSource,
    /// Keep only these labels, renumbered in the order listed.
    pub classes: Option<Vec<usize>>,
    /// Keep a seeded random subset of this many rows.
    pub subsample: Option<usize>,
    #[serde(default)]
    pub grayscale: bool,
    /// `[height, width]`.
    pub resize: Option<[usize; 2]>,
    /// Label treated as positive in binary metrics.
    pub positive_label: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    format: DataFormat,
    path: Option<PathBuf>,
    images: Option<PathBuf>,
    labels: Option<PathBuf>,
    batches: Option<Vec<PathBuf>>,
    label_column: Option<String>,
    scale: Option<f64>,
    classes: Option<Vec<usize>>,
    subsample: Option<usize>,
    #[serde(default)]
    grayscale: bool,
    resize: Option<[usize; 2]>,
    positive_label: Option<usize>,
}

impl TryFrom<RawDataset> for DatasetConfig {
    type Error = String;

    fn try_from(r: RawDataset) -> std::result::Result<Self, String> {
        let need = |v: Option<PathBuf>, key: &str| v.ok_or_else(|| format!("{:?} dataset needs `{key}`", r.format));
        let csv_only = r.label_column.is_some() || r.scale.is_some();
        let source = match r.format {
            DataFormat::Idx => DataSource::Idx {
                images: need(r.images.clone(), "images")?,
                labels: need(r.labels.clone(), "labels")?,
            },
            DataFormat::Cifar10 => DataSource::Cifar10 {
                batches: r
                    .batches
                    .clone()
                    .filter(|b| !b.is_empty())
                    .ok_or("cifar10 dataset needs `batches`")?,
            },
            DataFormat::Container => DataSource::Container {
                path: need(r.path.clone(), "path")?,
            },
            DataFormat::Csv => DataSource::Csv {
                path: need(r.path.clone(), "path")?,
                label_column: r.label_column.clone().unwrap_or_else(|| "label".into()),
                scale: r.scale.unwrap_or(1.0),
            },
        };
        let stray = match r.format {
            DataFormat::Idx => r.path.is_some() || r.batches.is_some() || csv_only,
            DataFormat::Cifar10 => r.path.is_some() || r.images.is_some() || r.labels.is_some() || csv_only,
            DataFormat::Container => r.images.is_some() || r.labels.is_some() || r.batches.is_some() || csv_only,
            DataFormat::Csv => r.images.is_some() || r.labels.is_some() || r.batches.is_some(),
        };
        if stray {
            return Err(format!("keys given that a {:?} dataset does not use", r.format));
        }
        if let DataSource::Csv { scale, .. } = source {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(format!("csv scale {scale} must be positive"));
            }
        }
        Ok(Self {
            source,
            classes: r.classes,
            subsample: r.subsample,
            grayscale: r.grayscale,
            resize: r.resize,
            positive_label: r.positive_label,
        })
    }
}

impl DatasetConfig {
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.source {
            DataSource::Idx { images, labels } => {
                fix(images);
                fix(labels);
            }
            DataSource::Cifar10 { batches } => batches.iter_mut().for_each(fix),
            DataSource::Container { path } | DataSource::Csv { path, .. } => fix(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConfig {
    Kfold {
        #[serde(default = "two")]
        folds: usize,
        seed: Option<u64>,
    },
    Holdout {
        test_fraction: f64,
        seed: Option<u64>,
    },
    /// `per_class` lists training counts per target label; `train_per_class`
    /// uses one count for every label.
    PerClass {
        per_class: Option<Vec<usize>>,
        train_per_class: Option<usize>,
        seed: Option<u64>,
    },
}

fn two() -> usize {
    2
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::Kfold { folds: 2, seed: None }
    }
}

impl SplitConfig {
    pub fn plan(&self, num_classes: usize, default_seed: u64) -> Result<SplitPlan> {
        let (kind, seed) = match self {
            SplitConfig::Kfold { folds, seed } => (SplitKind::KFold { folds: *folds }, seed),
            SplitConfig::Holdout { test_fraction, seed } => (
                SplitKind::Holdout {
                    test_fraction: *test_fraction,
                },
                seed,
            ),
            SplitConfig::PerClass {
                per_class,
                train_per_class,
                seed,
            } => {
                let counts = match (per_class, train_per_class) {
                    (Some(v), None) => v.clone(),
                    (None, Some(n)) => vec![*n; num_classes],
                    _ => {
                        return Err(AppError::Config(
                            "per_class split needs exactly one of per_class or train_per_class".into(),
                        ))
                    }
                };
                (SplitKind::PerClassSubsample { per_class: counts }, seed)
            }
        };
        Ok(SplitPlan {
            kind,
            seed: seed.unwrap_or(default_seed),
        })
    }
}

/// How one grid point is chosen per method.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    /// Hold out this stratified fraction of each training fold and select by
    /// accuracy on it. Without it, selection uses mean test accuracy over the
    /// folds, as in cross-validated reporting.
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub output: OutputKind,
}

fn default_hidden() -> Vec<usize> {
    vec![100, 100, 100]
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_dims: default_hidden(),
            output: OutputKind::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    #[default]
    Linear,
    Softmax,
}

impl From<OutputKind> for SourceOutput {
    fn from(k: OutputKind) -> Self {
        match k {
            OutputKind::Linear => SourceOutput::Linear,
            OutputKind::Softmax => SourceOutput::Softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionConfig {
    #[serde(default)]
    pub kind: NoiseKind,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub tied_weights: bool,
}

fn default_rate() -> f64 {
    0.3
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Masking,
            rate: default_rate(),
            tied_weights: false,
        }
    }
}

impl CorruptionConfig {
    pub fn spec(&self) -> Result<CorruptionSpec> {
        let spec = CorruptionSpec {
            kind: match self.kind {
                NoiseKind::Masking => CorruptionKind::Masking,
                NoiseKind::Gaussian => CorruptionKind::Gaussian,
            },
            rate: self.rate,
        };
        spec.validate().map_err(|e| AppError::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Masking,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayKind {
    #[default]
    Reciprocal,
    Exponential,
}

impl From<DecayKind> for LrDecay {
    fn from(k: DecayKind) -> Self {
        match k {
            DecayKind::Reciprocal => LrDecay::Reciprocal,
            DecayKind::Exponential => LrDecay::Exponential,
        }
    }
}

/// A single optimizer setting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub minibatch: usize,
    pub epochs: usize,
    #[serde(default)]
    pub lr_decay: DecayKind,
    #[serde(default)]
    pub weight_decay: f64,
    pub momentum_ramp_iters: Option<u64>,
}

fn default_pretrain() -> TrainSection {
    TrainSection {
        learning_rate: 1e-2,
        momentum: 0.99,
        minibatch: 10,
        epochs: 15,
        lr_decay: DecayKind::Reciprocal,
        weight_decay: 0.0,
        momentum_ramp_iters: None,
    }
}

fn default_source_finetune() -> TrainSection {
    TrainSection {
        epochs: 30,
        ..default_pretrain()
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            final_momentum: self.momentum,
            minibatch: self.minibatch,
            epochs: self.epochs,
            seed,
            momentum_ramp_iters: self.momentum_ramp_iters,
            weight_decay: self.weight_decay,
            lr_decay: self.lr_decay.into(),
        };
        cfg.validate().map_err(|e| AppError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Target fine-tuning settings; every combination of the three lists is a
/// grid point.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lrs")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_momenta")]
    pub momenta: Vec<f64>,
    #[serde(default = "default_minibatches")]
    pub minibatches: Vec<usize>,
    #[serde(default)]
    pub lr_decay: DecayKind,
    pub momentum_ramp_iters: Option<u64>,
}

fn default_epochs() -> usize {
    100
}

fn default_lrs() -> Vec<f64> {
    vec![1e-3, 5e-3, 1e-2, 5e-2]
}

fn default_momenta() -> Vec<f64> {
    vec![0.7, 0.99]
}

fn default_minibatches() -> Vec<usize> {
    vec![10, 100]
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            learning_rates: default_lrs(),
            momenta: default_momenta(),
            minibatches: default_minibatches(),
            lr_decay: DecayKind::Reciprocal,
            momentum_ramp_iters: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub momentum: f64,
    pub minibatch: usize,
}

impl GridConfig {
    /// Points ordered by learning rate, then minibatch, then momentum, all
    /// ascending; this order also breaks selection ties.
    pub fn points(&self) -> Result<Vec<GridPoint>> {
        if self.learning_rates.is_empty() || self.momenta.is_empty() || self.minibatches.is_empty() {
            return Err(AppError::Config("fine-tuning grid has an empty axis".into()));
        }
        let mut lrs = self.learning_rates.clone();
        let mut mus = self.momenta.clone();
        let mut mbs = self.minibatches.clone();
        lrs.sort_by(f64::total_cmp);
        mus.sort_by(f64::total_cmp);
        mbs.sort_unstable();
        let mut out = Vec::new();
        for &learning_rate in &lrs {
            for &minibatch in &mbs {
                for &momentum in &mus {
                    out.push(GridPoint {
                        learning_rate,
                        momentum,
                        minibatch,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn train_config(&self, p: &GridPoint, seed: u64) -> Result<TrainConfig> {
        TrainSection {
            learning_rate: p.learning_rate,
            momentum: p.momentum,
            minibatch: p.minibatch,
            epochs: self.epochs,
            lr_decay: self.lr_decay,
            weight_decay: 0.0,
            momentum_ramp_iters: self.momentum_ramp_iters,
        }
        .train_config(seed)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// Ridge added to class covariances; relative to the mean diagonal unless
    /// `epsilon_mode = "absolute"`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_mode: EpsilonMode,
    #[serde(default)]
    pub covariance: CovarianceKind,
    #[serde(default)]
    pub literal_sigma: bool,
    #[serde(default)]
    pub recompute_relations: bool,
}

fn default_epsilon() -> f64 {
    1e-3
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            epsilon_mode: EpsilonMode::Relative,
            covariance: CovarianceKind::Full,
            literal_sigma: false,
            recompute_relations: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    #[default]
    Relative,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

impl TransferConfig {
    pub fn relation_options(&self) -> RelationOptions {
        RelationOptions {
            regularization: match self.epsilon_mode {
                EpsilonMode::Relative => Regularization::Relative(self.epsilon),
                EpsilonMode::Absolute => Regularization::Absolute(self.epsilon),
            },
            covariance: match self.covariance {
                CovarianceKind::Full => CovarianceMode::Full,
                CovarianceKind::Diagonal => CovarianceMode::Diagonal,
            },
        }
    }

    pub fn options(&self) -> TransferOptions {
        TransferOptions {
            relation: self.relation_options(),
            form: if self.literal_sigma {
                DistanceForm::Literal
            } else {
                DistanceForm::Inverse
            },
            recompute_relations_after: self.recompute_relations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Atdl,
    NonTransfer,
    Ssl,
    Agrawal,
    Oquab,
    PcaLogistic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Atdl => "atdl",
            Method::NonTransfer => "non_transfer",
            Method::Ssl => "ssl",
            Method::Agrawal => "agrawal",
            Method::Oquab => "oquab",
            Method::PcaLogistic => "pca_logistic",
        }
    }

    pub fn needs_source_model(self) -> bool {
        matches!(self, Method::Atdl | Method::Agrawal | Method::Oquab)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselinesConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub oquab_adapt_dim: Option<usize>,
    #[serde(default = "default_energy")]
    pub pca_energy: f64,
    /// Cap on source rows mixed into SSL pretraining.
    pub ssl_source_rows: Option<usize>,
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::NonTransfer,
        Method::Ssl,
        Method::Agrawal,
        Method::Oquab,
        Method::PcaLogistic,
    ]
}

fn default_energy() -> f64 {
    0.995
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            oquab_adapt_dim: None,
            pca_energy: default_energy(),
            ssl_source_rows: None,
        }
    }
}

impl BaselinesConfig {
    pub fn kind(&self, m: Method, last_hidden: Option<usize>) -> Option<BaselineKind> {
        Some(match m {
            Method::Atdl => return None,
            Method::NonTransfer => BaselineKind::NonTransfer,
            Method::Ssl => BaselineKind::Ssl,
            Method::Agrawal => BaselineKind::Agrawal,
            Method::Oquab => BaselineKind::Oquab {
                adapt_dim: self.oquab_adapt_dim.or(last_hidden).unwrap_or(0),
            },
            Method::PcaLogistic => BaselineKind::PcaLogistic,
        })
    }
}

/// A parsed config plus where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the config file bytes.
    pub hash: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        for d in [&mut config.source, &mut config.target].into_iter().flatten() {
            d.resolve_paths(base_dir);
        }
        if config.out_dir.is_relative() {
            config.out_dir = base_dir.join(&config.out_dir);
        }
        config.validate()?;
        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            config,
            hash,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &base)
    }

    /// Short form of the hash for table headers.
    pub fn short_hash(&self) -> &str {
        &self.hash[..16]
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AppError::Config(m));
        if self.network.hidden_dims.is_empty() || self.network.hidden_dims.contains(&0) {
            return bad(format!("hidden_dims {:?} must be nonempty and positive", self.network.hidden_dims));
        }
        let g = &self.finetune;
        if g.learning_rates.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("learning rates must be positive".into());
        }
        if g.momenta.iter().any(|&v| !(0.0..1.0).contains(&v)) {
            return bad("momenta must lie in [0, 1)".into());
        }
        if g.minibatches.contains(&0) {
            return bad("minibatch sizes must be positive".into());
        }
        if let Some(f) = self.selection.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("validation_fraction {f} must lie in (0, 1)"));
            }
        }
        if !(self.transfer.epsilon >= 0.0 && self.transfer.epsilon.is_finite()) {
            return bad("epsilon must be finite and >= 0".into());
        }
        if !(self.baselines.pca_energy > 0.0 && self.baselines.pca_energy <= 1.0) {
            return bad("pca_energy must lie in (0, 1]".into());
        }
        self.corruption.spec()?;
        self.pretrain.train_config(0)?;
        self.source_finetune.train_config(0)?;
        Ok(())
    }

    pub fn sda_settings(&self, seed: u64) -> Result<SdaSettings> {
        Ok(SdaSettings {
            hidden_dims: self.network.hidden_dims.clone(),
            corruption: self.corruption.spec()?,
            pretrain: self.pretrain.train_config(seed)?,
        })
    }

    pub fn require_source(&self) -> Result<&DatasetConfig> {
        self.source
            .as_ref()
            .ok_or_else(|| AppError::Config("missing [source] section".into()))
    }

    pub fn require_target(&self) -> Result<&DatasetConfig> {
        self.target
            .as_ref()
            .ok_or_else(|| AppError::Config("missing [target] section".into()))
    }
}
