//! Confusion counts and the diagnostic statistics reported for binary tasks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Binary counts with respect to a chosen positive label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BinaryConfusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryConfusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts with the other label treated as positive.
    pub fn swapped(&self) -> Self {
        Self::new(self.tn, self.fn_, self.fp, self.tp)
    }
}

/// `counts[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulticlassConfusion {
    pub counts: Vec<Vec<u64>>,
}

impl MulticlassConfusion {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.correct() as f64, self.total() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Confusion {
    Binary(BinaryConfusion),
    Multiclass(MulticlassConfusion),
}

impl Confusion {
    pub fn total(&self) -> u64 {
        match self {
            Confusion::Binary(b) => b.total(),
            Confusion::Multiclass(m) => m.total(),
        }
    }
}

/// Binary counts when `positive` is given; otherwise a square matrix sized by
/// the largest label seen.
pub fn confusion(predictions: &[usize], truths: &[usize], positive: Option<usize>) -> Result<Confusion> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("confusion of zero samples".into()));
    }
    Ok(match positive {
        Some(p) => {
            let mut c = BinaryConfusion::default();
            for (&y, &t) in predictions.iter().zip(truths) {
                match (y == p, t == p) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => c.tn += 1,
                }
            }
            Confusion::Binary(c)
        }
        None => {
            let k = predictions.iter().chain(truths).max().map_or(0, |m| m + 1);
            let mut counts = vec![vec![0u64; k]; k];
            for (&y, &t) in predictions.iter().zip(truths) {
                counts[t][y] += 1;
            }
            Confusion::Multiclass(MulticlassConfusion { counts })
        }
    })
}

/// Undefined values (zero denominators) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub mcc: Option<f64>,
    pub f1: Option<f64>,
    pub acc: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn report(c: &BinaryConfusion) -> MetricsReport {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let mcc_den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    MetricsReport {
        ppv: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
        mcc: ratio(tp * tn - fp * fn_, libm::sqrt(mcc_den)).map(|v| v.clamp(-1.0, 1.0)),
        f1: ratio(2.0 * tp, 2.0 * tp + fp + fn_),
        acc: ratio(tp + tn, c.total() as f64),
    }
}

/// Fraction of positions where the two label slices agree.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    match confusion(predictions, truths, None)? {
        Confusion::Multiclass(m) => Ok(m.accuracy().unwrap_or(0.0)),
        Confusion::Binary(_) => unreachable!(),
    }
}
