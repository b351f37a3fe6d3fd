use alloc::string::String;

/// Failures raised by the training and classification pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate:e})")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error("target label {label} has no samples")]
    MissingClass { label: usize },
    #[error("regularized covariance{} is singular; raise epsilon", label.map(|l| alloc::format!(" of label {l}")).unwrap_or_default())]
    Singular { label: Option<usize> },
    #[error("correlation undefined: input has zero variance")]
    UndefinedCorrelation,
    #[error("eigensolver did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
