//! Greedy denoising-autoencoder pretraining and supervised fine-tuning of the
//! source network.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::network::{
    train, train_with, Activation, InputNoise, Layer, LayerSpec, LossKind, Network, TraceKind, TrainConfig, TrainOptions,
};
use crate::numerics::{derive_seed, Matrix, Rng};
use crate::{Error, Result};

const ENCODER_INIT: u64 = 0x0065_6e63;
const OUTPUT_INIT: u64 = 0x006f_7574;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    /// Zero each coordinate independently with probability `rate`.
    Masking,
    /// Add `N(0, rate²)` noise to each coordinate.
    Gaussian,
}

/// The corruption process applied to autoencoder inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Masking probability in `[0, 1)`, or Gaussian standard deviation `>= 0`.
    pub rate: f64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            kind: CorruptionKind::Masking,
            rate: 0.3,
        }
    }
}

impl CorruptionSpec {
    pub fn masking(rate: f64) -> Result<Self> {
        let s = Self {
            kind: CorruptionKind::Masking,
            rate,
        };
        s.validate().map(|_| s)
    }

    pub fn gaussian(stddev: f64) -> Result<Self> {
        let s = Self {
            kind: CorruptionKind::Gaussian,
            rate: stddev,
        };
        s.validate().map(|_| s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            CorruptionKind::Masking => (0.0..1.0).contains(&self.rate),
            CorruptionKind::Gaussian => self.rate >= 0.0 && self.rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{:?} corruption rate {} out of range",
                self.kind, self.rate
            )))
        }
    }

    fn corrupt_inplace(&self, x: &mut [f64], rng: &mut Rng) {
        if self.rate == 0.0 {
            return;
        }
        match self.kind {
            CorruptionKind::Masking => {
                for v in x {
                    if rng.next_f64() < self.rate {
                        *v = 0.0;
                    }
                }
            }
            CorruptionKind::Gaussian => {
                for v in x {
                    *v += self.rate * rng.gaussian();
                }
            }
        }
    }
}

impl InputNoise for CorruptionSpec {
    fn corrupt_batch(&self, batch: &mut Matrix, rng: &mut Rng) {
        self.corrupt_inplace(batch.as_mut_slice(), rng);
    }
}

/// Draws `x̃ ~ q(x̃ | x)`.
pub fn corrupt(x: &[f64], spec: &CorruptionSpec, rng: &mut Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    spec.corrupt_inplace(&mut out, rng);
    out
}

/// Encoder parameters of one pretrained autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedLayer {
    pub layer: Layer,
    /// Mean denoising reconstruction loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Greedy layer-wise pretraining settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pretrainer {
    pub corruption: CorruptionSpec,
    /// Share the encoder weights (transposed) with the decoder.
    pub tied_weights: bool,
}

impl Pretrainer {
    pub fn new(corruption: CorruptionSpec) -> Self {
        Self {
            corruption,
            tied_weights: false,
        }
    }

    /// Trains `x̂ = s(W′ s(W x̃ + b) + b′)` to reconstruct the clean input and
    /// keeps the encoder `(W, b)`.
    pub fn layer(&self, input: &Matrix, hidden_dim: usize, cfg: &TrainConfig) -> Result<PretrainedLayer> {
        self.corruption.validate()?;
        if hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be >= 1".into()));
        }
        let d = input.cols();
        let mut rng = Rng::new(derive_seed(cfg.seed, ENCODER_INIT));
        let ae = Network::new(
            &[
                LayerSpec::new(d, hidden_dim, Activation::Sigmoid),
                LayerSpec::new(hidden_dim, d, Activation::Sigmoid),
            ],
            &mut rng,
        )?;
        let opts = TrainOptions {
            noise: Some(&self.corruption),
            tied: self.tied_weights.then_some((0, 1)),
            trace: TraceKind::EpochAverage,
            ..TrainOptions::default()
        };
        let out = train_with(ae, input, input, LossKind::SquaredError, cfg, &opts)?;
        let mut net = out.network;
        net.pop();
        let layer = net.layers()[0].clone();
        Ok(PretrainedLayer {
            layer,
            loss_trace: out.loss_trace,
        })
    }

    /// Pretrains each layer on the clean activations of the stack below it.
    /// Layer `i` uses seed `cfg.seed + i`.
    pub fn stack(&self, x: &Matrix, hidden_dims: &[usize], cfg: &TrainConfig) -> Result<PretrainedStack> {
        if hidden_dims.is_empty() {
            return Err(Error::InvalidArgument("hidden_dims must be nonempty".into()));
        }
        let mut layers = Vec::with_capacity(hidden_dims.len());
        let mut traces = Vec::with_capacity(hidden_dims.len());
        let mut acts = x.clone();
        for (i, &h) in hidden_dims.iter().enumerate() {
            let layer_cfg = cfg.with_seed(cfg.seed.wrapping_add(i as u64));
            let pre = self.layer(&acts, h, &layer_cfg)?;
            log::info!(
                "pretrained layer {} ({} -> {}), final reconstruction loss {:?}",
                i + 1,
                acts.cols(),
                h,
                pre.loss_trace.last()
            );
            if i + 1 < hidden_dims.len() {
                let single = Network::from_layers(alloc::vec![pre.layer.clone()])?;
                acts = single.predict(&acts)?;
            }
            layers.push(pre.layer);
            traces.push(pre.loss_trace);
        }
        Ok(PretrainedStack {
            network: Network::from_layers(layers)?,
            loss_traces: traces,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedStack {
    /// `L` sigmoid layers without an output layer.
    pub network: Network,
    pub loss_traces: Vec<Vec<f64>>,
}

pub fn pretrain_layer(input: &Matrix, hidden_dim: usize, spec: &CorruptionSpec, cfg: &TrainConfig) -> Result<PretrainedLayer> {
    Pretrainer::new(*spec).layer(input, hidden_dim, cfg)
}

pub fn stack_pretrain(x: &Matrix, hidden_dims: &[usize], spec: &CorruptionSpec, cfg: &TrainConfig) -> Result<PretrainedStack> {
    Pretrainer::new(*spec).stack(x, hidden_dims, cfg)
}

/// Output layer of a source network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceOutput {
    /// Linear regression head trained with squared error; required for transfer.
    Linear,
    /// Softmax head trained with cross-entropy; used by the baselines.
    Softmax,
}

impl SourceOutput {
    pub fn activation(self) -> Activation {
        match self {
            SourceOutput::Linear => Activation::Linear,
            SourceOutput::Softmax => Activation::Softmax,
        }
    }

    pub fn loss(self) -> LossKind {
        match self {
            SourceOutput::Linear => LossKind::SquaredError,
            SourceOutput::Softmax => LossKind::CrossEntropy,
        }
    }
}

/// A network trained on the source task.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    pub net: Network,
    pub label_names: Vec<String>,
    /// Free-form origin tag (dataset id and configuration hash).
    pub provenance: String,
}

impl SourceModel {
    pub fn new(net: Network, label_names: Vec<String>, provenance: String) -> Result<Self> {
        if net.depth() < 2 {
            return Err(Error::InvalidArgument(
                "a source model needs at least one hidden layer and an output layer".into(),
            ));
        }
        if label_names.len() != net.output_dim() {
            return Err(Error::InvalidArgument(format!(
                "{} label names for a {}-dimensional output",
                label_names.len(),
                net.output_dim()
            )));
        }
        if net.output_activation() == Activation::Sigmoid {
            return Err(Error::InvalidArgument("source output layer must be linear or softmax".into()));
        }
        Ok(Self {
            net,
            label_names,
            provenance,
        })
    }

    pub fn output(&self) -> SourceOutput {
        match self.net.output_activation() {
            Activation::Softmax => SourceOutput::Softmax,
            _ => SourceOutput::Linear,
        }
    }

    pub fn hidden_depth(&self) -> usize {
        self.net.depth() - 1
    }
}

/// Appends an output layer over the source labels and fine-tunes every layer
/// jointly on clean inputs.
pub fn finetune_source(
    stack: Network,
    x: &Matrix,
    y_onehot: &Matrix,
    cfg: &TrainConfig,
    output: SourceOutput,
    label_names: Vec<String>,
    provenance: String,
) -> Result<(SourceModel, Vec<f64>)> {
    if stack.output_activation() != Activation::Sigmoid {
        return Err(Error::InvalidArgument("stack must end in a sigmoid hidden layer".into()));
    }
    for (i, row) in y_onehot.row_iter().enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::InvalidArgument(format!("source label row {i} is not one-hot")));
        }
    }
    let mut net = stack;
    let mut rng = Rng::new(derive_seed(cfg.seed, OUTPUT_INIT));
    net.push(Layer::init(
        LayerSpec::new(net.output_dim(), y_onehot.cols(), output.activation()),
        &mut rng,
    )?)?;
    let out = train(net, x, y_onehot, output.loss(), cfg)?;
    Ok((SourceModel::new(out.network, label_names, provenance)?, out.loss_trace))
}
