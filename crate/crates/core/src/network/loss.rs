use crate::numerics::Matrix;
use crate::{Error, Result};

use super::Activation;

/// Probabilities are clamped to this floor before taking logarithms.
pub const CROSS_ENTROPY_FLOOR: f64 = 1e-12;

/// Training objective. Each is a mean over samples (rows).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `||t − o||²` per sample; source-task fine-tuning and autoencoders.
    SquaredError,
    /// `−Σ t ln p` per sample over a softmax output.
    CrossEntropy,
    /// `||r_l − o||²` per sample, where the target row is the fixed relation
    /// vector of the sample's label.
    VarianceToTargets,
}

impl LossKind {
    pub fn tag(self) -> u32 {
        match self {
            LossKind::SquaredError => 0,
            LossKind::CrossEntropy => 1,
            LossKind::VarianceToTargets => 2,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(LossKind::SquaredError),
            1 => Some(LossKind::CrossEntropy),
            2 => Some(LossKind::VarianceToTargets),
            _ => None,
        }
    }

    /// Cross-entropy needs a softmax output; the squared losses take a linear
    /// output, or a sigmoid one for autoencoder reconstruction.
    pub fn check_output(self, activation: Activation) -> Result<()> {
        let ok = match self {
            LossKind::CrossEntropy => activation == Activation::Softmax,
            LossKind::SquaredError | LossKind::VarianceToTargets => activation != Activation::Softmax,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(alloc::format!(
                "{self:?} is incompatible with a {activation:?} output layer"
            )))
        }
    }
}

pub fn loss(kind: LossKind, outputs: &Matrix, targets: &Matrix) -> Result<f64> {
    if outputs.shape() != targets.shape() {
        return Err(Error::Shape {
            op: "loss",
            left: outputs.shape(),
            right: targets.shape(),
        });
    }
    if outputs.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = match kind {
        LossKind::SquaredError | LossKind::VarianceToTargets => outputs
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .map(|(o, t)| (t - o) * (t - o))
            .sum(),
        LossKind::CrossEntropy => outputs
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .filter(|(_, &t)| t != 0.0)
            .map(|(&p, &t)| -t * libm::log(p.max(CROSS_ENTROPY_FLOOR)))
            .sum(),
    };
    Ok(total / outputs.rows() as f64)
}
