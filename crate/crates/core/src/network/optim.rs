use alloc::vec::Vec;

use crate::numerics::{derive_seed, Matrix, Rng};
use crate::{Error, Result};

use super::backprop::backward_from;
use super::{loss, Gradients, LossKind, Network};

/// Decay constant of the learning-rate schedule.
pub const LR_DECAY_FACTOR: f64 = 1.00004;
/// Momentum at the first iteration; it ramps linearly to the final momentum.
pub const INITIAL_MOMENTUM: f64 = 0.5;

const NOISE_STREAM: u64 = 0x006e_6f69_7365;

/// How the learning rate shrinks with the iteration count `t >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LrDecay {
    /// `λ / (1.00004 · t)`.
    #[default]
    Reciprocal,
    /// `λ / 1.00004^t`.
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Initial learning rate λ.
    pub learning_rate: f64,
    /// Final momentum μ.
    pub final_momentum: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Iterations over which momentum ramps from 0.5 to μ. `None` means one
    /// epoch's worth of minibatches.
    pub momentum_ramp_iters: Option<u64>,
    /// L2 penalty added to weight (not bias) gradients.
    pub weight_decay: f64,
    pub lr_decay: LrDecay,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            final_momentum: 0.99,
            minibatch: 10,
            epochs: 100,
            seed: 0,
            momentum_ramp_iters: None,
            weight_decay: 0.0,
            lr_decay: LrDecay::Reciprocal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(alloc::format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.final_momentum) {
            return Err(Error::InvalidArgument(alloc::format!(
                "final momentum must lie in [0, 1), got {}",
                self.final_momentum
            )));
        }
        if self.minibatch == 0 {
            return Err(Error::InvalidArgument("minibatch size must be >= 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        Ok(())
    }

    pub fn with_epochs(&self, epochs: usize) -> Self {
        Self { epochs, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Learning rate and momentum as functions of the iteration count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub learning_rate: f64,
    pub final_momentum: f64,
    pub ramp_iters: u64,
    pub decay: LrDecay,
}

impl Schedule {
    /// Resolves the momentum ramp against the number of minibatches per epoch.
    pub fn new(cfg: &TrainConfig, batches_per_epoch: u64) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            final_momentum: cfg.final_momentum,
            ramp_iters: cfg.momentum_ramp_iters.unwrap_or(batches_per_epoch).max(1),
            decay: cfg.lr_decay,
        }
    }

    pub fn learning_rate_at(&self, t: u64) -> f64 {
        let t = t.max(1) as f64;
        match self.decay {
            LrDecay::Reciprocal => self.learning_rate / (LR_DECAY_FACTOR * t),
            LrDecay::Exponential => self.learning_rate / libm::pow(LR_DECAY_FACTOR, t),
        }
    }

    pub fn momentum_at(&self, t: u64) -> f64 {
        let frac = (t as f64 / self.ramp_iters as f64).min(1.0);
        INITIAL_MOMENTUM + (self.final_momentum - INITIAL_MOMENTUM) * frac
    }
}

/// Momentum buffers, one per trainable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    layers: Vec<Option<(Matrix, Vec<f64>)>>,
}

impl Velocity {
    pub fn zeros(net: &Network) -> Self {
        Self::for_layers(net, &alloc::vec![true; net.depth()])
    }

    pub fn for_layers(net: &Network, trainable: &[bool]) -> Self {
        let layers = net
            .layers()
            .iter()
            .zip(trainable)
            .map(|(l, &t)| {
                t.then(|| {
                    let (o, i) = l.weights().shape();
                    (Matrix::zeros(o, i), alloc::vec![0.0; o])
                })
            })
            .collect();
        Self { layers }
    }
}

/// One momentum step at iteration `t`:
/// `v ← m(t)·v − η(t)·g`, then `θ ← θ + v`.
///
/// Layers without a gradient or without a velocity buffer are left untouched.
pub fn sgd_step(net: &mut Network, grads: &Gradients, t: u64, schedule: &Schedule, weight_decay: f64, velocity: &mut Velocity) {
    let eta = schedule.learning_rate_at(t);
    let m = schedule.momentum_at(t);
    for (i, slot) in velocity.layers.iter_mut().enumerate() {
        let (Some((vw, vb)), Some(g)) = (slot.as_mut(), grads.layer(i)) else {
            continue;
        };
        let (w, b) = net.layer_mut(i).params_mut();
        for ((v, p), gw) in vw.as_mut_slice().iter_mut().zip(w.iter_mut()).zip(g.weights.as_slice()) {
            *v = m * *v - eta * (gw + weight_decay * *p);
            *p += *v;
        }
        for ((v, p), gb) in vb.iter_mut().zip(b.iter_mut()).zip(&g.bias) {
            *v = m * *v - eta * gb;
            *p += *v;
        }
    }
}

/// Applies stochastic input degradation to a training batch.
pub trait InputNoise {
    fn corrupt_batch(&self, batch: &mut Matrix, rng: &mut Rng);
}

/// What the per-epoch trace records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceKind {
    /// Loss on the full clean dataset after the epoch.
    #[default]
    FullDataset,
    /// Mean minibatch loss seen during the epoch.
    EpochAverage,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Per-layer update mask; `None` trains everything.
    pub trainable: Option<Vec<bool>>,
    /// Corruption applied to inputs only; targets stay clean.
    pub noise: Option<&'a dyn InputNoise>,
    /// `(encoder, decoder)`: the decoder's weights are kept equal to the
    /// transposed encoder weights and their gradients are shared.
    pub tied: Option<(usize, usize)>,
    pub trace: TraceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    pub loss_trace: Vec<f64>,
}

/// Minibatch momentum SGD over the whole network.
pub fn train(net: Network, data_x: &Matrix, data_t: &Matrix, kind: LossKind, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(net, data_x, data_t, kind, cfg, &TrainOptions::default())
}

/// [`train`] with a layer mask, input noise, weight tying or a different trace.
///
/// Rows are shuffled every epoch by Fisher–Yates with a generator seeded at
/// `cfg.seed + epoch`; the iteration counter runs across epochs from 1.
pub fn train_with(
    mut net: Network,
    data_x: &Matrix,
    data_t: &Matrix,
    kind: LossKind,
    cfg: &TrainConfig,
    opts: &TrainOptions<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    kind.check_output(net.output_activation())?;
    if data_x.rows() != data_t.rows() || data_x.rows() == 0 {
        return Err(Error::Shape {
            op: "train",
            left: data_x.shape(),
            right: data_t.shape(),
        });
    }
    if data_x.cols() != net.input_dim() || data_t.cols() != net.output_dim() {
        return Err(Error::Shape {
            op: "train",
            left: (data_x.cols(), data_t.cols()),
            right: (net.input_dim(), net.output_dim()),
        });
    }
    let trainable = opts.trainable.clone().unwrap_or_else(|| alloc::vec![true; net.depth()]);
    if trainable.len() != net.depth() {
        return Err(Error::InvalidArgument("trainable mask length differs from depth".into()));
    }
    let lowest = match trainable.iter().position(|&t| t) {
        Some(l) => l,
        None => {
            return Ok(TrainOutcome {
                network: net,
                loss_trace: Vec::new(),
            })
        }
    };
    if let Some((enc, dec)) = opts.tied {
        let (e, d) = (net.layers()[enc].weights(), net.layers()[dec].weights());
        if e.shape() != (d.cols(), d.rows()) {
            return Err(Error::Shape {
                op: "tied_weights",
                left: e.shape(),
                right: d.shape(),
            });
        }
        let t = e.transpose();
        net.layer_mut(dec).params_mut().0.copy_from_slice(t.as_slice());
    }

    let n = data_x.rows();
    let batches = n.div_ceil(cfg.minibatch) as u64;
    let schedule = Schedule::new(cfg, batches);
    let mut velocity = Velocity::for_layers(&net, &trainable);
    let mut noise_rng = Rng::new(derive_seed(cfg.seed, NOISE_STREAM));
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut t: u64 = 0;

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        Rng::new(cfg.seed.wrapping_add(epoch as u64)).shuffle(&mut order);
        let mut running = 0.0;
        for chunk in order.chunks(cfg.minibatch) {
            t += 1;
            let mut bx = data_x.select_rows(chunk);
            let bt = data_t.select_rows(chunk);
            if let Some(noise) = opts.noise {
                noise.corrupt_batch(&mut bx, &mut noise_rng);
            }
            let acts = net.forward_batch(&bx)?;
            if opts.trace == TraceKind::EpochAverage {
                running += loss(kind, &acts[acts.len() - 1], &bt)? * chunk.len() as f64;
            }
            let mut grads = backward_from(&net, &bx, &acts, &bt, kind, lowest)?;
            for (i, train) in trainable.iter().enumerate() {
                if !train {
                    grads.layers[i] = None;
                }
            }
            if let Some((enc, dec)) = opts.tied {
                tie_gradients(&mut grads, enc, dec);
            }
            sgd_step(&mut net, &grads, t, &schedule, cfg.weight_decay, &mut velocity);
            if let Some((enc, dec)) = opts.tied {
                let w = net.layers()[enc].weights().transpose();
                net.layer_mut(dec).params_mut().0.copy_from_slice(w.as_slice());
            }
        }
        let epoch_loss = match opts.trace {
            TraceKind::FullDataset => loss(kind, &net.predict(data_x)?, data_t)?,
            TraceKind::EpochAverage => running / n as f64,
        };
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                learning_rate: schedule.learning_rate_at(t),
            });
        }
        log::debug!(
            "epoch {} loss {:.6e} lr {:.3e}",
            epoch + 1,
            epoch_loss,
            schedule.learning_rate_at(t)
        );
        trace.push(epoch_loss);
    }
    Ok(TrainOutcome {
        network: net,
        loss_trace: trace,
    })
}

fn tie_gradients(grads: &mut Gradients, enc: usize, dec: usize) {
    let dec_w = grads.layers[dec].as_ref().map(|g| g.weights.transpose());
    if let (Some(extra), Some(e)) = (dec_w, grads.layers[enc].as_mut()) {
        for (a, b) in e.weights.as_mut_slice().iter_mut().zip(extra.as_slice()) {
            *a += b;
        }
    }
    if let Some(d) = grads.layers[dec].as_mut() {
        d.weights.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    }
}
