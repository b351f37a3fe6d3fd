use alloc::vec;
use alloc::vec::Vec;

use super::matrix::{dot, Matrix};
use crate::{Error, Result};

/// Sweep limit for the cyclic Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm, relative to the full norm, at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// Row `k` is the unit eigenvector for `values[k]`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi rotations on a symmetric matrix.
///
/// Only the upper triangle is read. Converged when the off-diagonal norm falls
/// below [`JACOBI_TOLERANCE`] times the Frobenius norm of the input.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let mut m = Matrix::from_fn(n, n, |i, j| if i <= j { a[(i, j)] } else { a[(j, i)] });
    // Columns of v accumulate the rotations.
    let mut v = Matrix::identity(n);
    let total = m.frobenius_norm();
    let threshold = JACOBI_TOLERANCE * total;

    let mut converged = total == 0.0;
    let mut sweep = 0;
    while !converged && sweep < JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s, t);
            }
        }
        sweep += 1;
    }
    if !converged && off_diagonal_norm(&m) > threshold {
        return Err(Error::NoConvergence { sweeps: JACOBI_MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |k, r| v[(r, order[k])]);
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += 2.0 * m[(i, j)] * m[(i, j)];
        }
    }
    libm::sqrt(s)
}

#[allow(clippy::too_many_arguments)]
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64, t: f64) {
    let n = m.rows();
    let apq = m[(p, q)];
    m[(p, p)] -= t * apq;
    m[(q, q)] += t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = m[(k, p)];
        let akq = m[(k, q)];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        m[(k, p)] = new_kp;
        m[(p, k)] = new_kp;
        m[(k, q)] = new_kq;
        m[(q, k)] = new_kq;
    }
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Fails with [`Error::Singular`] when a pivot is not clearly positive.
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::Shape {
                op: "cholesky",
                left: a.shape(),
                right: a.shape(),
            });
        }
        let max_diag = (0..n).map(|i| libm::fabs(a[(i, i)])).fold(0.0, f64::max);
        let floor = (n.max(1) as f64) * f64::EPSILON * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let lj = l.row(j)[..j].to_vec();
            let d = a[(j, j)] - dot(&lj, &lj);
            if d.is_nan() || d <= floor || !d.is_finite() {
                return Err(Error::Singular { label: None });
            }
            let djj = libm::sqrt(d);
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let s = a[(i, j)] - dot(&l.row(i)[..j], &lj);
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    /// Solves `L y = b` by forward substitution.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let s = b[i] - dot(&self.l.row(i)[..i], &y[..i]);
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Quadratic form `xᵀ A⁻¹ x`.
    pub fn inverse_quadratic(&self, x: &[f64]) -> f64 {
        let y = self.forward(x);
        dot(&y, &y)
    }
}

/// Quadratic form `xᵀ A x`.
pub fn quadratic(a: &Matrix, x: &[f64]) -> f64 {
    a.row_iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum()
}
