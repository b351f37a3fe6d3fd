use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{matmul, matmul_transa, Matrix};
use crate::{Error, Result};

use super::{Activation, LossKind, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Per-layer loss gradients. Layers below the lowest requested layer carry
/// no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerGradient>>,
}

impl Gradients {
    pub fn layer(&self, i: usize) -> Option<&LayerGradient> {
        self.layers.get(i).and_then(Option::as_ref)
    }
}

/// Exact gradients of [`super::loss`] over the batch with respect to every
/// weight and bias.
pub fn backward(net: &Network, batch_x: &Matrix, batch_t: &Matrix, kind: LossKind) -> Result<Gradients> {
    let acts = net.forward_batch(batch_x)?;
    backward_from(net, batch_x, &acts, batch_t, kind, 0)
}

/// Backpropagation from precomputed activations, stopping at `lowest`.
pub(crate) fn backward_from(
    net: &Network,
    batch_x: &Matrix,
    acts: &[Matrix],
    batch_t: &Matrix,
    kind: LossKind,
    lowest: usize,
) -> Result<Gradients> {
    let out = &acts[acts.len() - 1];
    if out.shape() != batch_t.shape() {
        return Err(Error::Shape {
            op: "backward",
            left: out.shape(),
            right: batch_t.shape(),
        });
    }
    if out.rows() == 0 {
        return Err(Error::InvalidArgument("backward on an empty batch".into()));
    }
    kind.check_output(net.output_activation())?;

    let n = out.rows() as f64;
    let mut delta = Matrix::zeros(out.rows(), out.cols());
    match kind {
        LossKind::SquaredError | LossKind::VarianceToTargets => {
            let sigmoid_out = net.output_activation() == Activation::Sigmoid;
            for ((d, &o), &t) in delta.as_mut_slice().iter_mut().zip(out.as_slice()).zip(batch_t.as_slice()) {
                let g = 2.0 * (o - t) / n;
                *d = if sigmoid_out { g * o * (1.0 - o) } else { g };
            }
        }
        LossKind::CrossEntropy => {
            // d/dz of −Σ t ln softmax(z) is p·Σt − t.
            for i in 0..out.rows() {
                let mass: f64 = batch_t.row(i).iter().sum();
                let (p, t) = (out.row(i), batch_t.row(i));
                for (j, d) in delta.row_mut(i).iter_mut().enumerate() {
                    *d = (p[j] * mass - t[j]) / n;
                }
            }
        }
    }

    let depth = net.depth();
    let mut layers: Vec<Option<LayerGradient>> = vec![None; depth];
    for i in (lowest..depth).rev() {
        let input = if i == 0 { batch_x } else { &acts[i - 1] };
        let weights = matmul_transa(&delta, input)?;
        let mut bias = vec![0.0; delta.cols()];
        for r in delta.row_iter() {
            for (b, d) in bias.iter_mut().zip(r) {
                *b += d;
            }
        }
        layers[i] = Some(LayerGradient { weights, bias });
        if i > lowest {
            let mut prev = matmul(&delta, net.layers()[i].weights())?;
            // Every layer below the output is sigmoid.
            for (d, &h) in prev.as_mut_slice().iter_mut().zip(acts[i - 1].as_slice()) {
                *d *= h * (1.0 - h);
            }
            delta = prev;
        }
    }
    Ok(Gradients { layers })
}
