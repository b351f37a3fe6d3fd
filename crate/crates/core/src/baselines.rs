//! Comparison methods: target-only SdA, semi-supervised SdA, output-layer
//! replacement, frozen features with an adaptation layer, and PCA followed by
//! logistic regression.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::one_hot;
use crate::network::{train_with, Activation, Layer, LayerSpec, LossKind, Network, TrainConfig, TrainOptions};
use crate::numerics::{derive_seed, fit_pca, Matrix, PcaModel, Rng};
use crate::sda::{finetune_source, stack_pretrain, CorruptionSpec, SourceModel, SourceOutput};
use crate::{Error, Result};

const HEAD_INIT: u64 = 0x6865_6164;
/// L2 penalty used by [`pca_logistic`].
pub const LOGISTIC_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    NonTransfer,
    Ssl,
    Agrawal,
    Oquab { adapt_dim: usize },
    PcaLogistic,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::NonTransfer => "non_transfer",
            BaselineKind::Ssl => "ssl",
            BaselineKind::Agrawal => "agrawal",
            BaselineKind::Oquab { .. } => "oquab",
            BaselineKind::PcaLogistic => "pca_logistic",
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            BaselineKind::NonTransfer => 1,
            BaselineKind::Ssl => 2,
            BaselineKind::Agrawal => 3,
            BaselineKind::Oquab { .. } => 4,
            BaselineKind::PcaLogistic => 5,
        }
    }

    /// `adapt_dim` is only read for the Oquab tag.
    pub fn from_tag(tag: u32, adapt_dim: usize) -> Option<Self> {
        Some(match tag {
            1 => BaselineKind::NonTransfer,
            2 => BaselineKind::Ssl,
            3 => BaselineKind::Agrawal,
            4 => BaselineKind::Oquab { adapt_dim },
            5 => BaselineKind::PcaLogistic,
            _ => return None,
        })
    }

    pub fn needs_source(self) -> bool {
        matches!(self, BaselineKind::Agrawal | BaselineKind::Oquab { .. })
    }
}

/// A softmax classifier, optionally behind a PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub kind: BaselineKind,
    pub net: Network,
    pub pca: Option<PcaModel>,
}

impl Classifier {
    pub fn new(kind: BaselineKind, net: Network, pca: Option<PcaModel>) -> Result<Self> {
        if net.output_activation() != Activation::Softmax {
            return Err(Error::InvalidArgument("baseline classifiers end in a softmax layer".into()));
        }
        if let Some(p) = &pca {
            if p.components.rows() != net.input_dim() {
                return Err(Error::Shape {
                    op: "classifier",
                    left: p.components.shape(),
                    right: (net.input_dim(), 1),
                });
            }
        }
        Ok(Self { kind, net, pca })
    }

    pub fn num_classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        match &self.pca {
            Some(p) => self.net.predict(&p.project(x)?),
            None => self.net.predict(x),
        }
    }

    /// Most probable class per row; ties go to the lowest label.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self
            .probabilities(x)?
            .row_iter()
            .map(|p| {
                let mut best = 0;
                for (j, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Denoising pretraining settings shared by the SdA-based methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SdaSettings {
    pub hidden_dims: Vec<usize>,
    pub corruption: CorruptionSpec,
    pub pretrain: TrainConfig,
}

fn targets(labels: &[usize], num_classes: usize, rows: usize) -> Result<Matrix> {
    if labels.len() != rows {
        return Err(Error::Shape {
            op: "baseline",
            left: (rows, 1),
            right: (labels.len(), 1),
        });
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!("{num_classes} target classes")));
    }
    one_hot(labels, num_classes)
}

fn sda_softmax(
    kind: BaselineKind,
    pretrain_x: &Matrix,
    x: &Matrix,
    labels: &[usize],
    num_classes: usize,
    sda: &SdaSettings,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let stack = stack_pretrain(pretrain_x, &sda.hidden_dims, &sda.corruption, &sda.pretrain)?;
    classifier_from_stack(kind, stack.network, x, labels, num_classes, cfg)
}

/// Softmax fine-tuning of an already pretrained stack. [`non_transfer`] and
/// [`ssl`] are this after pretraining on their respective inputs, so callers
/// that sweep fine-tuning settings can pretrain once.
pub fn classifier_from_stack(
    kind: BaselineKind,
    stack: Network,
    x: &Matrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let y = targets(labels, num_classes, x.rows())?;
    let names = vec![String::new(); num_classes];
    let (model, trace) = finetune_source(stack, x, &y, cfg, SourceOutput::Softmax, names, String::new())?;
    Ok((Classifier::new(kind, model.net, None)?, trace))
}

/// SdA pretrained and fine-tuned on the target data alone.
pub fn non_transfer(
    x_target: &Matrix,
    labels: &[usize],
    num_classes: usize,
    sda: &SdaSettings,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    sda_softmax(BaselineKind::NonTransfer, x_target, x_target, labels, num_classes, sda, cfg)
}

/// SdA pretrained on unlabelled source and target inputs together, then
/// fine-tuned on the labelled target data.
pub fn ssl(
    x_source: &Matrix,
    x_target: &Matrix,
    labels: &[usize],
    num_classes: usize,
    sda: &SdaSettings,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let pool = if x_source.rows() == 0 {
        x_target.clone()
    } else {
        x_source.vstack(x_target)?
    };
    sda_softmax(BaselineKind::Ssl, &pool, x_target, labels, num_classes, sda, cfg)
}

fn source_hidden(source: &SourceModel) -> Result<Network> {
    let mut net = source.net.clone();
    net.pop()
        .ok_or_else(|| Error::InvalidArgument("source model has no hidden layers".into()))?;
    Ok(net)
}

/// Source hidden layers with a new softmax output; every layer is trained.
pub fn agrawal(
    source: &SourceModel,
    x_target: &Matrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let y = targets(labels, num_classes, x_target.rows())?;
    let mut net = source_hidden(source)?;
    let mut rng = Rng::new(derive_seed(cfg.seed, HEAD_INIT));
    net.push(Layer::init(
        LayerSpec::new(net.output_dim(), num_classes, Activation::Softmax),
        &mut rng,
    )?)?;
    let out = train_with(net, x_target, &y, LossKind::CrossEntropy, cfg, &TrainOptions::default())?;
    Ok((Classifier::new(BaselineKind::Agrawal, out.network, None)?, out.loss_trace))
}

/// Frozen source hidden layers, then a trained sigmoid adaptation layer of
/// `adapt_dim` units (default: the last hidden width) and a softmax output.
pub fn oquab(
    source: &SourceModel,
    x_target: &Matrix,
    labels: &[usize],
    num_classes: usize,
    adapt_dim: Option<usize>,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let y = targets(labels, num_classes, x_target.rows())?;
    let mut net = source_hidden(source)?;
    let frozen = net.depth();
    let width = net.output_dim();
    let adapt = adapt_dim.unwrap_or(width);
    if adapt == 0 {
        return Err(Error::InvalidArgument("adaptation layer needs at least one unit".into()));
    }
    let mut rng = Rng::new(derive_seed(cfg.seed, HEAD_INIT));
    net.push(Layer::init(LayerSpec::new(width, adapt, Activation::Sigmoid), &mut rng)?)?;
    net.push(Layer::init(LayerSpec::new(adapt, num_classes, Activation::Softmax), &mut rng)?)?;
    let mut trainable = vec![false; frozen];
    trainable.extend([true, true]);
    let opts = TrainOptions {
        trainable: Some(trainable),
        ..TrainOptions::default()
    };
    let out = train_with(net, x_target, &y, LossKind::CrossEntropy, cfg, &opts)?;
    let kind = BaselineKind::Oquab { adapt_dim: adapt };
    Ok((Classifier::new(kind, out.network, None)?, out.loss_trace))
}

/// Projects onto the fewest principal axes reaching `energy` of the variance
/// and fits multinomial logistic regression with an L2 penalty of
/// [`LOGISTIC_WEIGHT_DECAY`].
pub fn pca_logistic(
    x_target: &Matrix,
    labels: &[usize],
    num_classes: usize,
    energy: f64,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    let y = targets(labels, num_classes, x_target.rows())?;
    let (model, retained) = fit_pca(x_target, energy)?;
    if retained == 0 {
        return Err(Error::InvalidData("target inputs have no variance".into()));
    }
    let pca = model.truncated(retained);
    let z = pca.project(x_target)?;
    let mut rng = Rng::new(derive_seed(cfg.seed, HEAD_INIT));
    let net = Network::new(&[LayerSpec::new(retained, num_classes, Activation::Softmax)], &mut rng)?;
    let cfg = TrainConfig {
        weight_decay: LOGISTIC_WEIGHT_DECAY,
        ..cfg.clone()
    };
    let out = train_with(net, &z, &y, LossKind::CrossEntropy, &cfg, &TrainOptions::default())?;
    Ok((Classifier::new(BaselineKind::PcaLogistic, out.network, Some(pca))?, out.loss_trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::network::LrDecay;
    use alloc::string::ToString;

    fn blobs(n: usize, d: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Matrix::from_fn(n, d, |i, _| {
            let c = if labels[i] == 0 { 0.25 } else { 0.75 };
            c + rng.uniform(-0.15, 0.15)
        });
        (x, labels)
    }

    fn accuracy(c: &Classifier, x: &Matrix, labels: &[usize]) -> f64 {
        let p = c.predict(x).unwrap();
        p.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
    }

    fn settings() -> SdaSettings {
        SdaSettings {
            hidden_dims: vec![6],
            corruption: CorruptionSpec::default(),
            pretrain: TrainConfig {
                learning_rate: 0.05,
                epochs: 10,
                minibatch: 5,
                seed: 3,
                ..TrainConfig::default()
            },
        }
    }

    fn finetune() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            final_momentum: 0.99,
            minibatch: 5,
            epochs: 150,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    fn source_model(d: usize) -> SourceModel {
        let mut rng = Rng::new(90);
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let x = Matrix::from_fn(60, d, |i, _| 0.2 + 0.3 * labels[i] as f64 + rng.uniform(-0.1, 0.1));
        let stack = stack_pretrain(&x, &[7, 5], &CorruptionSpec::default(), &settings().pretrain).unwrap();
        let y = one_hot(&labels, 3).unwrap();
        finetune_source(
            stack.network,
            &x,
            &y,
            &finetune().with_epochs(30),
            SourceOutput::Linear,
            Dataset::numbered_labels(3),
            "src".to_string(),
        )
        .unwrap()
        .0
    }

    #[test]
    fn tags_round_trip() {
        for k in [
            BaselineKind::NonTransfer,
            BaselineKind::Ssl,
            BaselineKind::Agrawal,
            BaselineKind::Oquab { adapt_dim: 9 },
            BaselineKind::PcaLogistic,
        ] {
            assert_eq!(BaselineKind::from_tag(k.tag(), 9), Some(k));
        }
        assert_eq!(BaselineKind::from_tag(0, 0), None);
    }

    #[test]
    fn non_transfer_fits_separable_data() {
        let (x, labels) = blobs(40, 4, 1);
        let (c, _) = non_transfer(&x, &labels, 2, &settings(), &finetune()).unwrap();
        assert_eq!(accuracy(&c, &x, &labels), 1.0);
        let (again, _) = non_transfer(&x, &labels, 2, &settings(), &finetune()).unwrap();
        assert_eq!(c, again);
        assert!(c.predict(&Matrix::from_fn(5, 4, |_, _| 0.5)).unwrap().iter().all(|&l| l < 2));
    }

    #[test]
    fn ssl_with_empty_source_is_non_transfer() {
        let (x, labels) = blobs(30, 4, 2);
        let (a, _) = ssl(&Matrix::zeros(0, 4), &x, &labels, 2, &settings(), &finetune()).unwrap();
        let (b, _) = non_transfer(&x, &labels, 2, &settings(), &finetune()).unwrap();
        assert_eq!(a.net, b.net);
        assert_eq!(a.kind, BaselineKind::Ssl);
    }

    #[test]
    fn ssl_fits_separable_data() {
        let (x, labels) = blobs(40, 4, 3);
        let mut rng = Rng::new(5);
        let xs = Matrix::from_fn(50, 4, |_, _| rng.next_f64());
        let (c, _) = ssl(&xs, &x, &labels, 2, &settings(), &finetune()).unwrap();
        assert_eq!(accuracy(&c, &x, &labels), 1.0);
    }

    #[test]
    fn agrawal_replaces_head() {
        let src = source_model(4);
        let (x, labels) = blobs(40, 4, 6);
        let (c, _) = agrawal(&src, &x, &labels, 2, &finetune()).unwrap();
        let head = &c.net.layers()[2];
        assert_eq!(head.spec(), LayerSpec::new(5, 2, Activation::Softmax));
        assert_ne!(c.net.layers()[0], src.net.layers()[0]);

        let (frozen, _) = agrawal(&src, &x, &labels, 2, &finetune().with_epochs(0)).unwrap();
        assert_eq!(&frozen.net.layers()[..2], &src.net.layers()[..2]);
        assert!(accuracy(&c, &x, &labels) >= 0.95);
    }

    #[test]
    fn oquab_freezes_source_layers() {
        let src = source_model(4);
        let (x, labels) = blobs(40, 4, 7);
        let (c, trace) = oquab(&src, &x, &labels, 2, None, &finetune()).unwrap();
        assert_eq!(c.kind, BaselineKind::Oquab { adapt_dim: 5 });
        assert_eq!(&c.net.layers()[..2], &src.net.layers()[..2]);
        assert_eq!(c.net.layers()[2].spec(), LayerSpec::new(5, 5, Activation::Sigmoid));
        assert_eq!(c.net.layers()[3].spec(), LayerSpec::new(5, 2, Activation::Softmax));
        assert!(trace.last().unwrap() < &trace[0]);
        assert!(accuracy(&c, &x, &labels) >= 0.95, "{}", accuracy(&c, &x, &labels));

        let (wide, _) = oquab(&src, &x, &labels, 2, Some(3), &finetune().with_epochs(1)).unwrap();
        assert_eq!(wide.net.layers()[2].spec().out_dim, 3);
        assert!(oquab(&src, &x, &labels, 2, Some(0), &finetune()).is_err());
    }

    #[test]
    fn pca_logistic_rank_one() {
        let mut rng = Rng::new(8);
        let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let t: Vec<f64> = labels
            .iter()
            .map(|&l| if l == 0 { rng.uniform(0.0, 0.3) } else { rng.uniform(0.6, 0.9) })
            .collect();
        let x = Matrix::from_fn(30, 3, |i, j| t[i] * [1.0, 0.5, 0.25][j]);
        let (c, _) = pca_logistic(&x, &labels, 2, 0.995, &finetune()).unwrap();
        assert_eq!(c.net.input_dim(), 1);
        assert_eq!(accuracy(&c, &x, &labels), 1.0);
    }

    #[test]
    fn pca_logistic_retains_energy_fraction() {
        // Axis-aligned variances 16, 4, 1, 0.25 over 4 points per axis sign.
        let scales = [4.0, 2.0, 1.0, 0.5];
        let mut rows = Vec::new();
        for (a, s) in scales.iter().enumerate() {
            for sign in [-1.0, 1.0] {
                let mut r = [0.5; 4];
                r[a] += sign * s / 10.0;
                rows.push(r);
            }
        }
        let x = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        // Ratios 16/21.25 = 0.753, 20/21.25 = 0.941, 21/21.25 = 0.988.
        let (c, _) = pca_logistic(&x, &labels, 2, 0.95, &finetune().with_epochs(1)).unwrap();
        assert_eq!(c.net.input_dim(), 3);
        let (c, _) = pca_logistic(&x, &labels, 2, 0.9, &finetune().with_epochs(1)).unwrap();
        assert_eq!(c.net.input_dim(), 2);
    }

    /// Penalised 1-D logistic loss in terms of the logit difference, matching
    /// a two-class softmax whose weight penalty is split over both rows.
    fn penalised_loss(x: &[f64], y: &[usize], m: f64, u: f64, b: f64) -> f64 {
        let n = x.len() as f64;
        let data: f64 = x
            .iter()
            .zip(y)
            .map(|(&xi, &yi)| {
                let s = if yi == 1 { 1.0 } else { -1.0 };
                let z = s * (u * (xi - m) + b);
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            })
            .sum::<f64>()
            / n;
        data + LOGISTIC_WEIGHT_DECAY / 4.0 * u * u
    }

    #[test]
    fn pca_logistic_matches_grid_search_boundary() {
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let y = [0, 0, 1, 0, 1, 0, 1, 1];
        let m = x.iter().sum::<f64>() / 8.0;

        let (mut cu, mut cb, mut span) = (0.0, 0.0, 64.0);
        for _ in 0..60 {
            let mut best = (f64::INFINITY, cu, cb);
            for i in -20..=20 {
                for j in -20..=20 {
                    let (u, b) = (cu + span * i as f64 / 20.0, cb + span * j as f64 / 20.0);
                    let l = penalised_loss(&x, &y, m, u, b);
                    if l < best.0 {
                        best = (l, u, b);
                    }
                }
            }
            (cu, cb) = (best.1, best.2);
            span *= 0.5;
        }
        let oracle = m - cb / cu;

        let xm = Matrix::from_fn(8, 1, |i, _| x[i]);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            final_momentum: 0.9,
            minibatch: 8,
            epochs: 6000,
            seed: 1,
            lr_decay: LrDecay::Exponential,
            ..TrainConfig::default()
        };
        let (c, _) = pca_logistic(&xm, &y, 2, 0.995, &cfg).unwrap();
        let p1 = |v: f64| c.probabilities(&Matrix::from_fn(1, 1, |_, _| v)).unwrap()[(0, 1)] - 0.5;
        let (mut lo, mut hi) = (-5.0, 5.0);
        assert!(p1(lo).signum() != p1(hi).signum());
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if p1(mid).signum() == p1(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - oracle).abs() < 1e-3, "boundary {lo} vs oracle {oracle}");
    }

    #[test]
    fn shape_and_class_checks() {
        let (x, labels) = blobs(10, 3, 9);
        assert!(non_transfer(&x, &labels[..9], 2, &settings(), &finetune()).is_err());
        assert!(pca_logistic(&x, &labels, 1, 0.99, &finetune()).is_err());
        let flat = Matrix::from_fn(10, 3, |_, _| 0.5);
        assert!(matches!(
            pca_logistic(&flat, &labels, 2, 0.99, &finetune()),
            Err(Error::InvalidData(_))
        ));
    }
}
