//! Dense linear algebra, seeded randomness and the statistics built on them.

mod linalg;
mod matrix;
mod rng;
mod stats;

pub use linalg::{quadratic, symmetric_eigen, Cholesky, SymmetricEigen, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};
pub use matrix::{axpy, dot, matmul, matmul_transa, matmul_transb, Matrix};
pub use rng::{derive_seed, Rng};
pub use stats::{covariance, fit_pca, pearson, PcaModel};
