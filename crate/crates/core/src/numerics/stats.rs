use alloc::vec::Vec;

use super::linalg::symmetric_eigen;
use super::matrix::{axpy, dot, matmul_transa, matmul_transb, Matrix};
use crate::{Error, Result};

/// Population covariance `(1/N) Σ (x − mean)(x − mean)ᵀ` around a given mean.
///
/// The upper triangle is computed and mirrored, so the result is exactly
/// symmetric.
pub fn covariance(samples: &Matrix, mean: &[f64]) -> Result<Matrix> {
    let d = samples.cols();
    if mean.len() != d {
        return Err(Error::Shape {
            op: "covariance",
            left: samples.shape(),
            right: (mean.len(), 1),
        });
    }
    if samples.rows() == 0 {
        return Err(Error::InvalidArgument("covariance of zero samples".into()));
    }
    let centered = center(samples, mean);
    let mut cov = matmul_transa(&centered, &centered)?;
    let inv = 1.0 / samples.rows() as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] * inv;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

fn center(samples: &Matrix, mean: &[f64]) -> Matrix {
    let mut c = samples.clone();
    for i in 0..c.rows() {
        axpy(-1.0, mean, c.row_mut(i));
    }
    c
}

/// Pearson correlation coefficient of two equally long series.
pub fn pearson(d: &[f64], t: &[f64]) -> Result<f64> {
    if d.len() != t.len() || d.len() < 2 {
        return Err(Error::InvalidArgument(alloc::format!(
            "pearson needs two series of equal length >= 2, got {} and {}",
            d.len(),
            t.len()
        )));
    }
    let n = d.len() as f64;
    let md = d.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let (mut sdt, mut sdd, mut stt) = (0.0, 0.0, 0.0);
    for (a, b) in d.iter().zip(t) {
        let (x, y) = (a - md, b - mt);
        sdt += x * y;
        sdd += x * x;
        stt += y * y;
    }
    if sdd == 0.0 || stt == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sdt / libm::sqrt(sdd * stt)).clamp(-1.0, 1.0))
}

/// Principal axes of a sample, sorted by descending explained variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row `k` is the `k`-th unit principal axis.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// Keeps only the leading `k` axes.
    pub fn truncated(&self, k: usize) -> PcaModel {
        let k = k.min(self.components.rows());
        let idx: Vec<usize> = (0..k).collect();
        PcaModel {
            mean: self.mean.clone(),
            components: self.components.select_rows(&idx),
            explained_variance: self.explained_variance[..k].to_vec(),
        }
    }

    /// Scores of each row of `x` on the stored axes.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dims() {
            return Err(Error::Shape {
                op: "pca_project",
                left: x.shape(),
                right: (self.components.rows(), self.dims()),
            });
        }
        matmul_transb(&center(x, &self.mean), &self.components)
    }

    /// Maps scores back to the input space.
    pub fn reconstruct(&self, scores: &Matrix) -> Result<Matrix> {
        let mut x = scores.matmul(&self.components)?;
        x.add_row_vector(&self.mean);
        Ok(x)
    }
}

/// Fits PCA and reports the smallest number of axes whose cumulative
/// explained-variance ratio reaches `energy`.
///
/// When there are fewer samples than features, the eigenproblem is solved on
/// the `N x N` Gram matrix and mapped back. Axes with negligible variance are
/// dropped, so zero-variance input yields an empty model with zero retained
/// dimensions.
pub fn fit_pca(x: &Matrix, energy: f64) -> Result<(PcaModel, usize)> {
    if x.rows() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two samples".into()));
    }
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "PCA energy must lie in (0, 1], got {energy}"
        )));
    }
    let (n, d) = x.shape();
    let mean = x.column_means();
    let centered = center(x, &mean);

    let (values, vectors) = if n < d {
        let mut gram = matmul_transb(&centered, &centered)?;
        gram.scale(1.0 / n as f64);
        let eig = symmetric_eigen(&gram)?;
        // v = Xcᵀ u / sqrt(N λ)
        let mut axes = Matrix::zeros(n, d);
        for k in 0..n {
            let lambda = eig.values[k];
            if lambda <= 0.0 {
                continue;
            }
            let u = eig.vectors.row(k);
            let row = axes.row_mut(k);
            for (i, &ui) in u.iter().enumerate() {
                if ui != 0.0 {
                    axpy(ui, centered.row(i), row);
                }
            }
            let norm = libm::sqrt(dot(row, row));
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        (eig.values, axes)
    } else {
        let cov = covariance(x, &mean)?;
        let eig = symmetric_eigen(&cov)?;
        (eig.values, eig.vectors)
    };

    let largest = values.first().copied().unwrap_or(0.0).max(0.0);
    let keep = values.iter().take_while(|&&v| largest > 0.0 && v > largest * 1e-12).count();
    let idx: Vec<usize> = (0..keep).collect();
    let model = PcaModel {
        mean,
        components: vectors.select_rows(&idx),
        explained_variance: values[..keep].to_vec(),
    };

    let total: f64 = model.explained_variance.iter().sum();
    let mut retained = 0;
    if total > 0.0 {
        let mut cum = 0.0;
        for v in &model.explained_variance {
            cum += v;
            retained += 1;
            if cum / total >= energy - 1e-12 {
                break;
            }
        }
    }
    Ok((model, retained))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::symmetric_eigen;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn covariance_of_single_sample_at_mean_is_zero() {
        let x = Matrix::from_rows(&[[0.3, 0.7]]).unwrap();
        let c = covariance(&x, &[0.3, 0.7]).unwrap();
        assert_eq!(c, Matrix::zeros(2, 2));
    }

    #[test]
    fn covariance_hand_computed() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let c = covariance(&x, &[1.0, 0.0]).unwrap();
        assert_eq!(c, Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap());
    }

    #[test]
    fn covariance_is_exactly_symmetric() {
        let mut rng = Rng::new(2);
        let x = Matrix::from_fn(13, 6, |_, _| rng.next_f64());
        let c = covariance(&x, &x.column_means()).unwrap();
        assert_eq!(c, c.transpose());
    }

    #[test]
    fn pearson_perfect_lines() {
        let d = [0.1, 0.5, 2.0, -1.0, 3.3];
        let up: Vec<f64> = d.iter().map(|v| 3.0 * v + 1.0).collect();
        let down: Vec<f64> = d.iter().map(|v| -v).collect();
        assert!((pearson(&d, &up).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&d, &down).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_matches_two_pass_oracle() {
        // Oracle: textbook formula with sums taken in a different order.
        let mut rng = Rng::new(77);
        let d: Vec<f64> = (0..10).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let t: Vec<f64> = (0..10).map(|_| rng.uniform(0.0, 1.0)).collect();
        let n = 10.0;
        let (sd, st) = (d.iter().sum::<f64>(), t.iter().sum::<f64>());
        let sdt: f64 = d.iter().zip(&t).map(|(a, b)| a * b).sum();
        let sdd: f64 = d.iter().map(|a| a * a).sum();
        let stt: f64 = t.iter().map(|a| a * a).sum();
        let oracle = (n * sdt - sd * st) / ((n * sdd - sd * sd) * (n * stt - st * st)).sqrt();
        assert!((pearson(&d, &t).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn pearson_rejects_constant_input() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::UndefinedCorrelation));
        assert!(pearson(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn pca_rank_one_line() {
        let x = Matrix::from_fn(20, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        let (model, k) = fit_pca(&x, 0.995).unwrap();
        assert_eq!(k, 1);
        assert_eq!(model.components.rows(), 1);
    }

    #[test]
    fn pca_isotropic_gaussian() {
        let mut rng = Rng::new(123);
        let x = Matrix::from_fn(2000, 2, |_, _| rng.gaussian());
        // Oracle: closed-form eigenvalues of the 2x2 sample covariance.
        let c = covariance(&x, &x.column_means()).unwrap();
        let (a, b, d) = (c[(0, 0)], c[(0, 1)], c[(1, 1)]);
        let disc = (((a - d) / 2.0).powi(2) + b * b).sqrt();
        let (l1, l2) = ((a + d) / 2.0 + disc, (a + d) / 2.0 - disc);
        let (model, k40) = fit_pca(&x, 0.4).unwrap();
        assert!((model.explained_variance[0] - l1).abs() < 1e-10);
        assert!((model.explained_variance[1] - l2).abs() < 1e-10);
        assert_eq!(k40, 1);
        assert_eq!(fit_pca(&x, 0.95).unwrap().1, 2);
    }

    /// Eigenvalues of a symmetric 3x3 matrix from the trigonometric solution
    /// of its characteristic cubic.
    fn cubic_eigenvalues(m: &Matrix) -> [f64; 3] {
        let q = m.trace() / 3.0;
        let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = Matrix::from_fn(3, 3, |i, j| (m[(i, j)] - if i == j { q } else { 0.0 }) / p);
        let det = b[(0, 0)] * (b[(1, 1)] * b[(2, 2)] - b[(1, 2)] * b[(2, 1)]) - b[(0, 1)] * (b[(1, 0)] * b[(2, 2)] - b[(1, 2)] * b[(2, 0)])
            + b[(0, 2)] * (b[(1, 0)] * b[(2, 1)] - b[(1, 1)] * b[(2, 0)]);
        let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * core::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    #[test]
    fn jacobi_matches_cubic_roots() {
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let x = Matrix::from_fn(10, 3, |_, _| rng.uniform(-1.0, 1.0));
            let c = covariance(&x, &x.column_means()).unwrap();
            let eig = symmetric_eigen(&c).unwrap();
            let oracle = cubic_eigenvalues(&c);
            for k in 0..3 {
                assert!((eig.values[k] - oracle[k]).abs() < 1e-8, "{:?} vs {:?}", eig.values, oracle);
            }
        }
    }

    #[test]
    fn zero_variance_is_flagged_not_fatal() {
        let x = Matrix::from_fn(5, 3, |_, j| j as f64 * 0.1);
        let (model, k) = fit_pca(&x, 0.9).unwrap();
        assert_eq!(k, 0);
        assert_eq!(model.components.rows(), 0);
    }

    #[test]
    fn gram_route_matches_covariance_route() {
        let mut rng = Rng::new(8);
        let wide = Matrix::from_fn(6, 9, |_, _| rng.next_f64());
        let (m, _) = fit_pca(&wide, 1.0).unwrap();
        let c = covariance(&wide, &wide.column_means()).unwrap();
        let direct = symmetric_eigen(&c).unwrap();
        assert_eq!(m.explained_variance.len(), 5);
        for k in 0..5 {
            assert!((m.explained_variance[k] - direct.values[k]).abs() < 1e-10);
        }
    }

    fn check_orthonormal(m: &PcaModel) {
        let k = m.components.rows();
        for i in 0..k {
            for j in 0..k {
                let d = dot(m.components.row(i), m.components.row(j));
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-8);
            }
        }
        for w in m.explained_variance.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    proptest! {
        #[test]
        fn pca_reconstructs_centered_data(seed in any::<u64>(), n in 2usize..12, d in 1usize..8) {
            let mut rng = Rng::new(seed);
            let x = Matrix::from_fn(n, d, |_, _| rng.next_f64());
            let (model, _) = fit_pca(&x, 1.0).unwrap();
            check_orthonormal(&model);
            let back = model.reconstruct(&model.project(&x).unwrap()).unwrap();
            prop_assert!(back.max_abs_diff(&x) < 1e-8);
        }

        #[test]
        fn covariance_is_psd(seed in any::<u64>(), n in 1usize..10, d in 1usize..6) {
            let mut rng = Rng::new(seed);
            let x = Matrix::from_fn(n, d, |_, _| rng.uniform(-2.0, 2.0));
            let c = covariance(&x, &x.column_means()).unwrap();
            let eig = symmetric_eigen(&c).unwrap();
            prop_assert!(eig.values.iter().all(|&v| v >= -1e-10));
        }

        #[test]
        fn pearson_affine_invariance(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let mut rng = Rng::new(seed);
            let d: Vec<f64> = (0..8).map(|_| rng.next_f64()).collect();
            let t: Vec<f64> = (0..8).map(|_| rng.next_f64()).collect();
            let scaled: Vec<f64> = d.iter().map(|v| a * v + b).collect();
            let r0 = pearson(&d, &t).unwrap();
            let r1 = pearson(&scaled, &t).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-10);
            prop_assert!((-1.0..=1.0).contains(&r0));
        }
    }
}
