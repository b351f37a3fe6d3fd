//! Dense feedforward networks, backpropagation and the momentum SGD schedule.
//!
//! Weights follow the `h_i = s(W_i h_{i-1} + b_i)` convention: layer `i`
//! stores `W_i` as an `out_dim x in_dim` matrix, and a batch is a matrix with
//! one sample per row.

mod backprop;
mod loss;
mod optim;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{matmul_transb, Matrix, Rng};
use crate::{Error, Result};

pub use backprop::{backward, Gradients, LayerGradient};
pub use loss::{loss, LossKind, CROSS_ENTROPY_FLOOR};
pub use optim::{
    sgd_step, train, train_with, InputNoise, LrDecay, Schedule, TraceKind, TrainConfig, TrainOptions, TrainOutcome, Velocity,
    INITIAL_MOMENTUM, LR_DECAY_FACTOR,
};

/// Elementwise (or, for softmax, row-wise) nonlinearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Linear,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> u32 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Linear),
            2 => Some(Activation::Softmax),
            _ => None,
        }
    }

    fn apply_rows(self, z: &mut Matrix) {
        match self {
            Activation::Sigmoid => z.map_inplace(sigmoid),
            Activation::Linear => {}
            Activation::Softmax => {
                for i in 0..z.rows() {
                    softmax_inplace(z.row_mut(i));
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn softmax_inplace(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// One affine map plus activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weights.rows() != bias.len() || weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Shape {
                op: "layer",
                left: weights.shape(),
                right: (bias.len(), 1),
            });
        }
        Ok(Self { weights, bias, activation })
    }

    /// Uniform init in `±k·sqrt(6 / (fan_in + fan_out))` with `k = 4` for
    /// sigmoid layers and `k = 1` otherwise; zero biases.
    pub fn init(spec: LayerSpec, rng: &mut Rng) -> Result<Self> {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "layer dims must be >= 1, got {} -> {}",
                spec.in_dim, spec.out_dim
            )));
        }
        let k = match spec.activation {
            Activation::Sigmoid => 4.0,
            Activation::Linear | Activation::Softmax => 1.0,
        };
        let bound = k * libm::sqrt(6.0 / (spec.in_dim + spec.out_dim) as f64);
        let weights = Matrix::from_fn(spec.out_dim, spec.in_dim, |_, _| rng.uniform(-bound, bound));
        Layer::new(weights, vec![0.0; spec.out_dim], spec.activation)
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec::new(self.weights.cols(), self.weights.rows(), self.activation)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Mutable parameter access; shapes stay fixed.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weights.as_mut_slice(), &mut self.bias)
    }

    fn forward_batch(&self, input: &Matrix) -> Result<Matrix> {
        let mut z = matmul_transb(input, &self.weights)?;
        z.add_row_vector(&self.bias);
        self.activation.apply_rows(&mut z);
        Ok(z)
    }
}

/// Layered dense model. Hidden layers are sigmoid; linear or softmax may only
/// appear as the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let layers = specs.iter().map(|&s| Layer::init(s, rng)).collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let (a, b) = (pair[0].spec(), pair[1].spec());
            if a.out_dim != b.in_dim {
                return Err(Error::Shape {
                    op: "layer_chain",
                    left: (a.out_dim, a.in_dim),
                    right: (b.out_dim, b.in_dim),
                });
            }
            if a.activation != Activation::Sigmoid {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} is {:?}; only the last layer may be linear or softmax",
                    a.activation
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Layer {
        &mut self.layers[i]
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.rows()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    /// Appends a layer on top of the current output.
    pub fn push(&mut self, layer: Layer) -> Result<()> {
        let top = self.layers[self.layers.len() - 1].spec();
        let new = layer.spec();
        if top.out_dim != new.in_dim {
            return Err(Error::Shape {
                op: "layer_chain",
                left: (top.out_dim, top.in_dim),
                right: (new.out_dim, new.in_dim),
            });
        }
        if top.activation != Activation::Sigmoid {
            return Err(Error::InvalidArgument(format!(
                "cannot stack on a {:?} output layer",
                top.activation
            )));
        }
        self.layers.push(layer);
        Ok(())
    }

    /// Removes and returns the last layer; `None` for a single-layer network.
    pub fn pop(&mut self) -> Option<Layer> {
        if self.layers.len() > 1 {
            self.layers.pop()
        } else {
            None
        }
    }

    /// Activations of every layer for one input vector: `h_1 .. h_{L+1}`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(&input)?.into_iter().map(Matrix::into_vec).collect())
    }

    /// Activations of every layer for a batch (one sample per row).
    pub fn forward_batch(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let next = layer.forward_batch(acts.last().unwrap_or(x))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Output-layer responses for a batch.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = self.layers[0].forward_batch(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward_batch(&h)?;
        }
        Ok(h)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "forward",
                left: x.shape(),
                right: (self.layers[0].weights.rows(), self.input_dim()),
            });
        }
        Ok(())
    }

    /// Largest absolute parameter difference to another network of the same shape.
    pub fn max_param_diff(&self, other: &Network) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                let w = a.weights.max_abs_diff(&b.weights);
                let bias = a.bias.iter().zip(&b.bias).map(|(x, y)| libm::fabs(x - y)).fold(0.0, f64::max);
                w.max(bias)
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_layer(i: usize, o: usize, a: Activation) -> Layer {
        Layer::new(Matrix::zeros(o, i), vec![0.0; o], a).unwrap()
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let net = Network::from_layers(vec![zero_layer(3, 4, Activation::Sigmoid)]).unwrap();
        let acts = net.forward(&[0.2, 0.9, 0.4]).unwrap();
        assert_eq!(acts[0], [0.5; 4]);
    }

    #[test]
    fn zero_linear_output_is_zero() {
        let net = Network::from_layers(vec![zero_layer(3, 2, Activation::Sigmoid), zero_layer(2, 5, Activation::Linear)]).unwrap();
        let acts = net.forward(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(acts.len(), 2);
        assert_eq!(acts[1], [0.0; 5]);
    }

    #[test]
    fn scalar_linear_map() {
        let layer = Layer::new(Matrix::from_rows(&[[2.0]]).unwrap(), vec![0.0], Activation::Linear).unwrap();
        let net = Network::from_layers(vec![layer]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap()[0], [6.0]);
    }

    #[test]
    fn rejects_bad_chain_and_inner_linear() {
        let err = Network::from_layers(vec![zero_layer(3, 2, Activation::Sigmoid), zero_layer(3, 2, Activation::Linear)]);
        assert!(matches!(err, Err(Error::Shape { .. })));
        let err = Network::from_layers(vec![zero_layer(3, 2, Activation::Linear), zero_layer(2, 2, Activation::Linear)]);
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn input_dimension_checked() {
        let net = Network::from_layers(vec![zero_layer(3, 2, Activation::Sigmoid)]).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = Rng::new(4);
        let net = Network::new(
            &[LayerSpec::new(5, 7, Activation::Sigmoid), LayerSpec::new(7, 4, Activation::Softmax)],
            &mut rng,
        )
        .unwrap();
        let x = Matrix::from_fn(10, 5, |_, _| rng.uniform(-3.0, 3.0));
        let out = net.predict(&x).unwrap();
        for r in out.row_iter() {
            let s: f64 = r.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn init_bounds_follow_activation() {
        let mut rng = Rng::new(1);
        let s = Layer::init(LayerSpec::new(10, 14, Activation::Sigmoid), &mut rng).unwrap();
        let l = Layer::init(LayerSpec::new(10, 14, Activation::Linear), &mut rng).unwrap();
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(s.weights().as_slice().iter().all(|w| w.abs() <= 4.0 * bound));
        assert!(s.weights().as_slice().iter().any(|w| w.abs() > bound));
        assert!(l.weights().as_slice().iter().all(|w| w.abs() <= bound));
        assert!(s.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn push_and_pop_output_layer() {
        let mut rng = Rng::new(2);
        let mut net = Network::new(&[LayerSpec::new(4, 3, Activation::Sigmoid)], &mut rng).unwrap();
        net.push(Layer::init(LayerSpec::new(3, 2, Activation::Linear), &mut rng).unwrap())
            .unwrap();
        assert_eq!(net.output_dim(), 2);
        let out = net.pop().unwrap();
        assert_eq!(out.spec().out_dim, 2);
        assert!(net.pop().is_none());
    }
}
