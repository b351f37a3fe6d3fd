//! All-layer transfer: relation vectors, fine-tuning toward them, Mahalanobis
//! classification and pre-fine-tuning source screening.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::network::{train, LossKind, Network, TrainConfig};
use crate::numerics::{covariance, pearson, quadratic, Cholesky, Matrix};
use crate::sda::SourceModel;
use crate::{Error, Result};

/// How the ridge `ε` added to each class covariance is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// The same `ε` for every label.
    Absolute(f64),
    /// `ε_l = c · mean(diag Σ_l)`. A class with zero spread falls back to the
    /// pooled covariance, and to `c` itself if that is zero too.
    Relative(f64),
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Relative(1e-3)
    }
}

impl Regularization {
    fn validate(self) -> Result<()> {
        let v = match self {
            Regularization::Absolute(v) | Regularization::Relative(v) => v,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("regularization {v} must be finite and >= 0")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CovarianceMode {
    #[default]
    Full,
    /// Off-diagonal entries dropped; useful when classes are tiny.
    Diagonal,
}

/// Which quadratic form scores a sample against a relation vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DistanceForm {
    /// `(r − f)ᵀ (Σ + εI)⁻¹ (r − f)`.
    #[default]
    Inverse,
    /// `(r − f)ᵀ (Σ + εI) (r − f)`, the matrix used without inversion.
    Literal,
}

impl DistanceForm {
    pub fn tag(self) -> u32 {
        match self {
            DistanceForm::Inverse => 0,
            DistanceForm::Literal => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(DistanceForm::Inverse),
            1 => Some(DistanceForm::Literal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelationOptions {
    pub regularization: Regularization,
    pub covariance: CovarianceMode,
}

/// Per target label: mean source-output response, its covariance and the
/// ridge used with it.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationSet {
    relations: Vec<Vec<f64>>,
    covariances: Vec<Matrix>,
    counts: Vec<usize>,
    regularizers: Vec<f64>,
}

impl RelationSet {
    pub fn new(relations: Vec<Vec<f64>>, covariances: Vec<Matrix>, counts: Vec<usize>, regularizers: Vec<f64>) -> Result<Self> {
        let k = relations.len();
        if k == 0 || covariances.len() != k || counts.len() != k || regularizers.len() != k {
            return Err(Error::InvalidArgument(format!(
                "relation set with {} relations, {} covariances, {} counts, {} regularizers",
                k,
                covariances.len(),
                counts.len(),
                regularizers.len()
            )));
        }
        let d = relations[0].len();
        for (l, (r, s)) in relations.iter().zip(&covariances).enumerate() {
            if r.len() != d || s.shape() != (d, d) {
                return Err(Error::Shape {
                    op: "relation_set",
                    left: (r.len(), d),
                    right: s.shape(),
                });
            }
            if !r.iter().all(|v| v.is_finite()) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite relation or covariance for label {l}")));
            }
            for i in 0..d {
                for j in 0..i {
                    if s[(i, j)] != s[(j, i)] {
                        return Err(Error::InvalidArgument(format!("covariance of label {l} is not symmetric")));
                    }
                }
            }
        }
        if let Some(e) = regularizers.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument(format!("regularizer {e} must be finite and >= 0")));
        }
        Ok(Self {
            relations,
            covariances,
            counts,
            regularizers,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.relations.len()
    }

    /// Source output dimension.
    pub fn dim(&self) -> usize {
        self.relations[0].len()
    }

    pub fn relations(&self) -> &[Vec<f64>] {
        &self.relations
    }

    pub fn relation(&self, label: usize) -> &[f64] {
        &self.relations[label]
    }

    /// Unregularized class covariances.
    pub fn covariances(&self) -> &[Matrix] {
        &self.covariances
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn regularizers(&self) -> &[f64] {
        &self.regularizers
    }

    /// `Σ_l + ε_l I`.
    pub fn regularized(&self, label: usize) -> Matrix {
        with_ridge(&self.covariances[label], self.regularizers[label])
    }

    /// Count-weighted mean of the class covariances and of their ridges.
    pub fn pooled(&self) -> (Matrix, f64) {
        let total: usize = self.counts.iter().sum();
        let d = self.dim();
        let mut pooled = Matrix::zeros(d, d);
        let mut eps = 0.0;
        for ((s, &n), &e) in self.covariances.iter().zip(&self.counts).zip(&self.regularizers) {
            let w = n as f64 / total.max(1) as f64;
            for (p, v) in pooled.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *p += w * v;
            }
            eps += w * e;
        }
        (pooled, eps)
    }

    /// The target matrix for fine-tuning: row `i` is `r_{labels[i]}`.
    pub fn targets(&self, labels: &[usize]) -> Result<Matrix> {
        let mut t = Matrix::zeros(labels.len(), self.dim());
        for (i, &l) in labels.iter().enumerate() {
            let r = self
                .relations
                .get(l)
                .ok_or_else(|| Error::InvalidArgument(format!("label {l} has no relation vector")))?;
            t.row_mut(i).copy_from_slice(r);
        }
        Ok(t)
    }

    /// Factorizes or copies each regularized covariance once for repeated
    /// scoring.
    pub fn metric(&self, form: DistanceForm) -> Result<DistanceMetric> {
        let mut forms = Vec::with_capacity(self.num_labels());
        for l in 0..self.num_labels() {
            let m = self.regularized(l);
            forms.push(match form {
                DistanceForm::Inverse => QuadForm::Inverse(Cholesky::new(&m).map_err(|_| Error::Singular { label: Some(l) })?),
                DistanceForm::Literal => QuadForm::Literal(m),
            });
        }
        Ok(DistanceMetric {
            relations: self.relations.clone(),
            forms,
        })
    }
}

fn with_ridge(s: &Matrix, eps: f64) -> Matrix {
    let mut m = s.clone();
    for i in 0..m.rows() {
        m[(i, i)] += eps;
    }
    m
}

fn mean_diag(s: &Matrix) -> f64 {
    if s.rows() == 0 {
        0.0
    } else {
        s.trace() / s.rows() as f64
    }
}

#[derive(Debug, Clone)]
enum QuadForm {
    Inverse(Cholesky),
    Literal(Matrix),
}

/// Prepared per-label quadratic forms.
#[derive(Debug, Clone)]
pub struct DistanceMetric {
    relations: Vec<Vec<f64>>,
    forms: Vec<QuadForm>,
}

impl DistanceMetric {
    pub fn distances(&self, f: &[f64]) -> Result<Vec<f64>> {
        let d = self.relations[0].len();
        if f.len() != d {
            return Err(Error::Shape {
                op: "distances",
                left: (f.len(), 1),
                right: (d, 1),
            });
        }
        Ok(self
            .relations
            .iter()
            .zip(&self.forms)
            .map(|(r, q)| {
                let diff: Vec<f64> = r.iter().zip(f).map(|(a, b)| a - b).collect();
                match q {
                    QuadForm::Inverse(c) => c.inverse_quadratic(&diff),
                    QuadForm::Literal(m) => quadratic(m, &diff),
                }
            })
            .collect())
    }

    /// Argmin of [`Self::distances`]; ties go to the lowest label.
    pub fn classify(&self, f: &[f64]) -> Result<(usize, Vec<f64>)> {
        let dist = self.distances(f)?;
        Ok((argmin(&dist), dist))
    }
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &d) in v.iter().enumerate().skip(1) {
        if d < v[best] {
            best = i;
        }
    }
    best
}

/// Relation vectors and covariances from precomputed source outputs.
pub fn relations_from_outputs(outputs: &Matrix, labels: &[usize], num_labels: usize, opts: &RelationOptions) -> Result<RelationSet> {
    opts.regularization.validate()?;
    if outputs.rows() != labels.len() {
        return Err(Error::Shape {
            op: "compute_relations",
            left: outputs.shape(),
            right: (labels.len(), 1),
        });
    }
    let mut rows = vec![Vec::new(); num_labels];
    for (i, &l) in labels.iter().enumerate() {
        rows.get_mut(l)
            .ok_or_else(|| Error::InvalidArgument(format!("label {l} out of {num_labels} target labels")))?
            .push(i);
    }
    if let Some(l) = rows.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass { label: l });
    }
    let mut relations = Vec::with_capacity(num_labels);
    let mut covariances = Vec::with_capacity(num_labels);
    let mut counts = Vec::with_capacity(num_labels);
    for idx in &rows {
        let block = outputs.select_rows(idx);
        let mean = block.column_means();
        let mut cov = covariance(&block, &mean)?;
        if opts.covariance == CovarianceMode::Diagonal {
            cov = Matrix::from_fn(cov.rows(), cov.cols(), |i, j| if i == j { cov[(i, j)] } else { 0.0 });
        }
        relations.push(mean);
        covariances.push(cov);
        counts.push(idx.len());
    }
    let regularizers = match opts.regularization {
        Regularization::Absolute(e) => vec![e; num_labels],
        Regularization::Relative(c) => {
            let total = labels.len() as f64;
            let pooled_diag: f64 = covariances.iter().zip(&counts).map(|(s, &n)| n as f64 / total * mean_diag(s)).sum();
            covariances
                .iter()
                .map(|s| {
                    let m = mean_diag(s);
                    let scale = if m > 0.0 {
                        m
                    } else if pooled_diag > 0.0 {
                        pooled_diag
                    } else {
                        1.0
                    };
                    c * scale
                })
                .collect()
        }
    };
    RelationSet::new(relations, covariances, counts, regularizers)
}

/// Class-conditional mean and covariance of the source output layer over the
/// target samples of each label.
pub fn compute_relations(
    source: &SourceModel,
    x_target: &Matrix,
    labels: &[usize],
    num_labels: usize,
    opts: &RelationOptions,
) -> Result<RelationSet> {
    let outputs = source.net.predict(x_target)?;
    relations_from_outputs(&outputs, labels, num_labels, opts)
}

/// The mean squared distance from each sample's output to its relation
/// vector.
pub fn relation_cost(net: &Network, rel: &RelationSet, x: &Matrix, labels: &[usize]) -> Result<f64> {
    crate::network::loss(LossKind::VarianceToTargets, &net.predict(x)?, &rel.targets(labels)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransferOptions {
    pub relation: RelationOptions,
    pub form: DistanceForm,
    /// Recompute relation vectors and covariances from the fine-tuned
    /// network for classification.
    pub recompute_relations_after: bool,
}

/// A source network fine-tuned toward relation vectors, with the relation set
/// it classifies against.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetModel {
    pub net: Network,
    pub relations: RelationSet,
    pub form: DistanceForm,
    pub label_names: Vec<String>,
    pub source_provenance: String,
}

impl TargetModel {
    pub fn new(
        net: Network,
        relations: RelationSet,
        form: DistanceForm,
        label_names: Vec<String>,
        source_provenance: String,
    ) -> Result<Self> {
        if relations.dim() != net.output_dim() {
            return Err(Error::Shape {
                op: "target_model",
                left: (relations.dim(), relations.num_labels()),
                right: (net.output_dim(), 1),
            });
        }
        if label_names.len() != relations.num_labels() {
            return Err(Error::InvalidArgument(format!(
                "{} label names for {} relation vectors",
                label_names.len(),
                relations.num_labels()
            )));
        }
        Ok(Self {
            net,
            relations,
            form,
            label_names,
            source_provenance,
        })
    }

    pub fn classify(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let metric = self.relations.metric(self.form)?;
        let out = self.net.forward(x)?;
        metric.classify(&out[out.len() - 1])
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let metric = self.relations.metric(self.form)?;
        let out = self.net.predict(x)?;
        out.row_iter().map(|f| metric.classify(f).map(|(l, _)| l)).collect()
    }
}

/// Trains every layer, including the reused output layer, to minimize the
/// mean of `||r_l − f(x)||²` with the relation vectors held fixed.
pub fn finetune_target(
    source: &SourceModel,
    rel: &RelationSet,
    x_target: &Matrix,
    labels: &[usize],
    label_names: Vec<String>,
    cfg: &TrainConfig,
    opts: &TransferOptions,
) -> Result<(TargetModel, Vec<f64>)> {
    if rel.dim() != source.net.output_dim() {
        return Err(Error::Shape {
            op: "finetune_target",
            left: (rel.dim(), 1),
            right: (source.net.output_dim(), 1),
        });
    }
    let targets = rel.targets(labels)?;
    let out = train(source.net.clone(), x_target, &targets, LossKind::VarianceToTargets, cfg)?;
    let relations = if opts.recompute_relations_after {
        let outputs = out.network.predict(x_target)?;
        relations_from_outputs(&outputs, labels, rel.num_labels(), &opts.relation)?
    } else {
        rel.clone()
    };
    let model = TargetModel::new(out.network, relations, opts.form, label_names, source.provenance.clone())?;
    Ok((model, out.loss_trace))
}

/// Minimum pairwise distance between relation vectors under the pooled,
/// regularized class covariance.
pub fn separation(rel: &RelationSet) -> Result<f64> {
    if rel.num_labels() < 2 {
        return Err(Error::InvalidArgument("separation needs at least two target labels".into()));
    }
    let (pooled, eps) = rel.pooled();
    let chol = Cholesky::new(&with_ridge(&pooled, eps))?;
    let mut best = f64::INFINITY;
    for a in 0..rel.num_labels() {
        for b in (a + 1)..rel.num_labels() {
            let diff: Vec<f64> = rel.relation(a).iter().zip(rel.relation(b)).map(|(x, y)| x - y).collect();
            best = best.min(chol.inverse_quadratic(&diff));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenEntry {
    pub source_id: String,
    pub separation: Result<f64>,
    /// Downstream accuracy after fine-tuning, when measured.
    pub performance: Option<f64>,
    /// 1-based rank among candidates whose separation was computed.
    pub rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenReport {
    /// Descending separation, then ascending source id; failures last.
    pub entries: Vec<ScreenEntry>,
    /// Pearson correlation between separation and performance.
    pub correlation: Option<f64>,
}

impl ScreenReport {
    pub fn from_entries(mut entries: Vec<ScreenEntry>) -> Self {
        entries.sort_by(|a, b| match (&a.separation, &b.separation) {
            (Ok(x), Ok(y)) => y.total_cmp(x).then_with(|| a.source_id.cmp(&b.source_id)),
            (Ok(_), Err(_)) => Ordering::Less,
            (Err(_), Ok(_)) => Ordering::Greater,
            (Err(_), Err(_)) => a.source_id.cmp(&b.source_id),
        });
        let mut rank = 0;
        for e in &mut entries {
            e.rank = e.separation.is_ok().then(|| {
                rank += 1;
                rank
            });
        }
        Self {
            entries,
            correlation: None,
        }
    }

    /// Attaches `performance(source_id)` to every entry and correlates it with
    /// separation over the entries that have both.
    pub fn attach_performance(&mut self, mut performance: impl FnMut(&str) -> Option<f64>) -> Result<f64> {
        let (mut d, mut t) = (Vec::new(), Vec::new());
        for e in &mut self.entries {
            e.performance = performance(&e.source_id);
            if let (Ok(s), Some(p)) = (&e.separation, e.performance) {
                d.push(*s);
                t.push(p);
            }
        }
        let r = pearson(&d, &t)?;
        self.correlation = Some(r);
        Ok(r)
    }

    /// `(separation, performance)` for entries that have both.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.entries
            .iter()
            .filter_map(|e| match (&e.separation, e.performance) {
                (Ok(s), Some(p)) => Some((*s, p)),
                _ => None,
            })
            .collect()
    }
}

/// Separation of one candidate source on the target data.
pub fn screen_candidate(
    source: &SourceModel,
    x_target: &Matrix,
    labels: &[usize],
    num_labels: usize,
    opts: &RelationOptions,
) -> Result<f64> {
    let rel = compute_relations(source, x_target, labels, num_labels, opts)?;
    separation(&rel)
}

/// Ranks candidate sources by the separation of their relation vectors.
/// Candidate failures are recorded in their entry.
pub fn screen_sources<'a>(
    candidates: impl IntoIterator<Item = (&'a str, &'a SourceModel)>,
    x_target: &Matrix,
    labels: &[usize],
    num_labels: usize,
    opts: &RelationOptions,
) -> Result<ScreenReport> {
    let entries: Vec<ScreenEntry> = candidates
        .into_iter()
        .map(|(id, model)| ScreenEntry {
            source_id: id.into(),
            separation: screen_candidate(model, x_target, labels, num_labels, opts),
            performance: None,
            rank: None,
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::InvalidArgument("no candidate sources".into()));
    }
    Ok(ScreenReport::from_entries(entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer, LayerSpec};
    use crate::numerics::Rng;
    use alloc::string::ToString;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn abs(e: f64) -> RelationOptions {
        RelationOptions {
            regularization: Regularization::Absolute(e),
            covariance: CovarianceMode::Full,
        }
    }

    fn identity_set(relations: Vec<Vec<f64>>, eps: f64) -> RelationSet {
        let d = relations[0].len();
        let k = relations.len();
        RelationSet::new(relations, vec![Matrix::identity(d); k], vec![1; k], vec![eps; k]).unwrap()
    }

    fn source(hidden: usize, input: usize, output: usize, seed: u64) -> SourceModel {
        let mut rng = Rng::new(seed);
        let net = Network::new(
            &[
                LayerSpec::new(input, hidden, Activation::Sigmoid),
                LayerSpec::new(hidden, output, Activation::Linear),
            ],
            &mut rng,
        )
        .unwrap();
        SourceModel::new(net, Dataset::numbered_labels(output), "test".to_string()).unwrap()
    }

    use crate::dataset::Dataset;

    #[test]
    fn single_sample_class() {
        let out = Matrix::from_rows(&[[0.3, -1.0], [1.0, 1.0], [3.0, 3.0]]).unwrap();
        let rel = relations_from_outputs(&out, &[0, 1, 1], 2, &abs(0.0)).unwrap();
        assert_eq!(rel.relation(0), &[0.3, -1.0]);
        assert!(rel.covariances()[0].as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(rel.relation(1), &[2.0, 2.0]);
        assert_eq!(rel.counts(), &[1, 2]);
    }

    #[test]
    fn two_sample_mean() {
        let out = Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        let rel = relations_from_outputs(&out, &[0, 0], 1, &abs(0.0)).unwrap();
        assert_eq!(rel.relation(0), &[1.0, 1.0]);
    }

    #[test]
    fn missing_class_names_label() {
        let out = Matrix::zeros(3, 2);
        assert_eq!(
            relations_from_outputs(&out, &[0, 2, 0], 3, &abs(0.0)),
            Err(Error::MissingClass { label: 1 })
        );
    }

    #[test]
    fn relations_match_loop_oracle() {
        let mut rng = Rng::new(31);
        let out = Matrix::from_fn(57, 6, |_, _| rng.uniform(-3.0, 3.0));
        let labels: Vec<usize> = (0..57).map(|_| rng.below(3)).collect();
        let rel = relations_from_outputs(&out, &labels, 3, &RelationOptions::default()).unwrap();
        for l in 0..3 {
            for j in 0..6 {
                let mut s = 0.0;
                let mut n = 0;
                for i in 0..57 {
                    if labels[i] == l {
                        s += out[(i, j)];
                        n += 1;
                    }
                }
                assert!((rel.relation(l)[j] - s / n as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relative_regularizer() {
        let out = Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0], [5.0, 5.0]]).unwrap();
        let rel = relations_from_outputs(&out, &[0, 0, 1], 2, &RelationOptions::default()).unwrap();
        // Σ_0 = diag(1, 4) plus off-diagonal 2, mean diagonal 2.5.
        assert!((rel.regularizers()[0] - 2.5e-3).abs() < 1e-15);
        // Class 1 has a single sample and falls back to the pooled mean diagonal.
        assert!((rel.regularizers()[1] - 1e-3 * (2.0 / 3.0) * 2.5).abs() < 1e-15);
        assert!(rel.metric(DistanceForm::Inverse).is_ok());
    }

    #[test]
    fn diagonal_mode_drops_correlations() {
        let out = Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        let opts = RelationOptions {
            covariance: CovarianceMode::Diagonal,
            ..abs(0.0)
        };
        let rel = relations_from_outputs(&out, &[0, 0], 1, &opts).unwrap();
        assert_eq!(rel.covariances()[0].as_slice(), &[1.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn singular_without_ridge() {
        let out = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [4.0, 1.0], [5.0, 2.0]]).unwrap();
        let rel = relations_from_outputs(&out, &[0, 0, 1, 1], 2, &abs(0.0)).unwrap();
        assert_eq!(rel.metric(DistanceForm::Inverse).unwrap_err(), Error::Singular { label: Some(0) });
        assert!(rel.metric(DistanceForm::Literal).is_ok());
    }

    #[test]
    fn hand_classification() {
        let rel = identity_set(vec![vec![0.0, 0.0], vec![4.0, 4.0]], 0.0);
        let (label, d) = rel.metric(DistanceForm::Inverse).unwrap().classify(&[0.5, 0.0]).unwrap();
        assert_eq!(label, 0);
        assert_eq!(d, vec![0.25, 28.25]);
    }

    #[test]
    fn exact_relation_has_zero_distance() {
        let mut rng = Rng::new(2);
        let out = Matrix::from_fn(20, 4, |_, _| rng.next_f64());
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let rel = relations_from_outputs(&out, &labels, 2, &RelationOptions::default()).unwrap();
        let d = rel.metric(DistanceForm::Inverse).unwrap().distances(rel.relation(1)).unwrap();
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn ties_go_to_lowest_label() {
        let rel = identity_set(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]], 0.0);
        let (label, _) = rel.metric(DistanceForm::Inverse).unwrap().classify(&[0.0, 0.0]).unwrap();
        assert_eq!(label, 0);
    }

    #[test]
    fn identity_covariance_matches_nearest_euclidean() {
        let mut rng = Rng::new(77);
        let relations: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect()).collect();
        let rel = identity_set(relations.clone(), 0.0);
        let metric = rel.metric(DistanceForm::Inverse).unwrap();
        for _ in 0..100 {
            let f: Vec<f64> = (0..5).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let oracle = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = relations[a].iter().zip(&f).map(|(r, x)| (r - x) * (r - x)).sum();
                    let db: f64 = relations[b].iter().zip(&f).map(|(r, x)| (r - x) * (r - x)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(metric.classify(&f).unwrap().0, oracle);
        }
    }

    #[test]
    fn literal_form_scales_by_covariance() {
        let rel = RelationSet::new(
            vec![vec![0.0, 0.0], vec![3.0, 0.0]],
            vec![Matrix::from_rows(&[[4.0, 0.0], [0.0, 1.0]]).unwrap(); 2],
            vec![1, 1],
            vec![0.0, 0.0],
        )
        .unwrap();
        let f = [1.0, 0.0];
        assert_eq!(rel.metric(DistanceForm::Literal).unwrap().distances(&f).unwrap(), vec![4.0, 16.0]);
        assert_eq!(rel.metric(DistanceForm::Inverse).unwrap().distances(&f).unwrap(), vec![0.25, 1.0]);
    }

    #[test]
    fn separation_examples() {
        assert_eq!(separation(&identity_set(vec![vec![1.0, 2.0], vec![1.0, 2.0]], 0.0)).unwrap(), 0.0);
        assert_eq!(separation(&identity_set(vec![vec![0.0, 0.0], vec![2.0, 0.0]], 0.0)).unwrap(), 4.0);
        let three = identity_set(vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 1.0]], 0.0);
        assert_eq!(separation(&three).unwrap(), 1.0);
        assert!(separation(&identity_set(vec![vec![0.0]], 0.0)).is_err());
    }

    #[test]
    fn separation_uses_count_weighted_pool() {
        let rel = RelationSet::new(
            vec![vec![0.0], vec![2.0]],
            vec![Matrix::from_rows(&[[1.0]]).unwrap(), Matrix::from_rows(&[[4.0]]).unwrap()],
            vec![3, 1],
            vec![0.0, 0.0],
        )
        .unwrap();
        // Pooled variance 0.75·1 + 0.25·4 = 1.75.
        assert!((separation(&rel).unwrap() - 4.0 / 1.75).abs() < 1e-15);
    }

    #[test]
    fn initial_cost_is_weighted_trace() {
        let src = source(7, 5, 4, 12);
        let mut rng = Rng::new(13);
        let x = Matrix::from_fn(40, 5, |_, _| rng.next_f64());
        let labels: Vec<usize> = (0..40).map(|_| rng.below(3)).collect();
        let rel = compute_relations(&src, &x, &labels, 3, &RelationOptions::default()).unwrap();
        let cost = relation_cost(&src.net, &rel, &x, &labels).unwrap();
        let n: usize = rel.counts().iter().sum();
        let identity: f64 = rel
            .covariances()
            .iter()
            .zip(rel.counts())
            .map(|(s, &c)| c as f64 / n as f64 * s.trace())
            .sum();
        assert!((cost - identity).abs() < 1e-10, "{cost} vs {identity}");
    }

    #[test]
    fn cost_zero_when_samples_sit_on_relations() {
        // Output independent of input: all layers feed zero weights.
        let hidden = Layer::new(Matrix::zeros(3, 2), vec![0.0; 3], Activation::Sigmoid).unwrap();
        let out = Layer::new(Matrix::zeros(2, 3), vec![0.7, -0.2], Activation::Linear).unwrap();
        let net = Network::from_layers(vec![hidden, out]).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2], [0.9, 0.4]]).unwrap();
        let src = SourceModel::new(net, Dataset::numbered_labels(2), String::new()).unwrap();
        let rel = compute_relations(&src, &x, &[0, 1], 2, &RelationOptions::default()).unwrap();
        assert_eq!(relation_cost(&src.net, &rel, &x, &[0, 1]).unwrap(), 0.0);
        let g = crate::network::backward(&src.net, &x, &rel.targets(&[0, 1]).unwrap(), LossKind::VarianceToTargets).unwrap();
        for lg in g.layers.iter().flatten() {
            assert!(lg.weights.as_slice().iter().chain(&lg.bias).all(|&v| v == 0.0));
        }
    }

    fn toy_target(rng: &mut Rng) -> (Matrix, Vec<usize>) {
        let labels: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let x = Matrix::from_fn(30, 5, |i, j| {
            let base = if labels[i] == 0 { 0.25 } else { 0.75 };
            (base + if j < 2 { rng.uniform(-0.2, 0.2) } else { rng.uniform(-0.5, 0.5) }).clamp(0.0, 1.0)
        });
        (x, labels)
    }

    #[test]
    fn finetuning_lowers_cost_and_classifies() {
        let src = source(8, 5, 4, 41);
        let mut rng = Rng::new(42);
        let (x, labels) = toy_target(&mut rng);
        let rel = compute_relations(&src, &x, &labels, 2, &RelationOptions::default()).unwrap();
        let before = relation_cost(&src.net, &rel, &x, &labels).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            final_momentum: 0.7,
            minibatch: 5,
            epochs: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        let names = Dataset::numbered_labels(2);
        let (model, trace) = finetune_target(&src, &rel, &x, &labels, names.clone(), &cfg, &TransferOptions::default()).unwrap();
        assert_eq!(trace.len(), 3);
        let mut prev = before;
        for &c in &trace {
            assert!(c <= prev, "{trace:?} from {before}");
            prev = c;
        }
        assert_eq!(model.relations, rel);
        assert_eq!(model.net.output_dim(), 4);

        let (long, _) = finetune_target(
            &src,
            &rel,
            &x,
            &labels,
            names,
            &TrainConfig {
                learning_rate: 0.05,
                final_momentum: 0.9,
                epochs: 200,
                ..cfg
            },
            &TransferOptions::default(),
        )
        .unwrap();
        let pred = long.predict(&x).unwrap();
        let acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / 30.0;
        assert!(acc >= 0.9, "{acc}");
        assert_eq!(long.classify(x.row(0)).unwrap().0, pred[0]);
    }

    #[test]
    fn recompute_flag_refreshes_relations() {
        let src = source(6, 5, 3, 50);
        let mut rng = Rng::new(51);
        let (x, labels) = toy_target(&mut rng);
        let rel = compute_relations(&src, &x, &labels, 2, &RelationOptions::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            minibatch: 5,
            ..TrainConfig::default()
        };
        let opts = TransferOptions {
            recompute_relations_after: true,
            ..TransferOptions::default()
        };
        let (model, _) = finetune_target(&src, &rel, &x, &labels, Dataset::numbered_labels(2), &cfg, &opts).unwrap();
        let fresh = compute_relations(
            &SourceModel::new(model.net.clone(), Dataset::numbered_labels(3), String::new()).unwrap(),
            &x,
            &labels,
            2,
            &RelationOptions::default(),
        )
        .unwrap();
        assert_eq!(model.relations, fresh);
        assert_ne!(model.relations, rel);
    }

    #[test]
    fn finetuning_is_deterministic() {
        let src = source(6, 5, 3, 60);
        let mut rng = Rng::new(61);
        let (x, labels) = toy_target(&mut rng);
        let rel = compute_relations(&src, &x, &labels, 2, &RelationOptions::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let run = || {
            finetune_target(
                &src,
                &rel,
                &x,
                &labels,
                Dataset::numbered_labels(2),
                &cfg,
                &TransferOptions::default(),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn screening_ranks_and_correlates() {
        let mut rng = Rng::new(70);
        let (x, labels) = toy_target(&mut rng);
        let good = source(8, 5, 3, 71);
        // Zero input weights make every output identical: no separation.
        let mut flat = good.clone();
        flat.net.layer_mut(0).params_mut().0.iter_mut().for_each(|w| *w = 0.0);
        let twin = good.clone();
        let report = screen_sources(
            [("b-good", &good), ("a-flat", &flat), ("c-twin", &twin)],
            &x,
            &labels,
            2,
            &RelationOptions::default(),
        )
        .unwrap();
        let ids: Vec<&str> = report.entries.iter().map(|e| e.source_id.as_str()).collect();
        assert_eq!(ids, ["b-good", "c-twin", "a-flat"]);
        assert_eq!(report.entries[0].separation, report.entries[1].separation);
        assert!(*report.entries[2].separation.as_ref().unwrap() < 1e-12);
        assert_eq!(
            report.entries.iter().map(|e| e.rank).collect::<Vec<_>>(),
            [Some(1), Some(2), Some(3)]
        );

        let mut r = report.clone();
        let seps: Vec<(String, f64)> = r
            .entries
            .iter()
            .map(|e| (e.source_id.clone(), *e.separation.as_ref().unwrap()))
            .collect();
        let corr = r
            .attach_performance(|id| seps.iter().find(|(s, _)| s == id).map(|(_, d)| *d))
            .unwrap();
        assert!((corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn screening_records_failures() {
        let mut rng = Rng::new(80);
        let (x, labels) = toy_target(&mut rng);
        let ok = source(4, 5, 3, 81);
        let wrong_input = source(4, 7, 3, 82);
        let report = screen_sources([("ok", &ok), ("bad", &wrong_input)], &x, &labels, 2, &RelationOptions::default()).unwrap();
        assert_eq!(report.entries[0].source_id, "ok");
        assert!(report.entries[1].separation.is_err());
        assert_eq!(report.entries[1].rank, None);
        let none: [(&str, &SourceModel); 0] = [];
        assert!(screen_sources(none, &x, &labels, 2, &RelationOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn classification_is_translation_invariant(
            seed in 0u64..1000,
            shift in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let mut rng = Rng::new(seed);
            let out = Matrix::from_fn(24, 3, |_, _| rng.uniform(-1.0, 1.0));
            let labels: Vec<usize> = (0..24).map(|i| i % 3).collect();
            let mut moved = out.clone();
            moved.add_row_vector(&shift);
            let a = relations_from_outputs(&out, &labels, 3, &RelationOptions::default()).unwrap();
            let b = relations_from_outputs(&moved, &labels, 3, &RelationOptions::default()).unwrap();
            let (ma, mb) = (a.metric(DistanceForm::Inverse).unwrap(), b.metric(DistanceForm::Inverse).unwrap());
            for _ in 0..20 {
                let f: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let g: Vec<f64> = f.iter().zip(&shift).map(|(x, s)| x + s).collect();
                let (da, db) = (ma.distances(&f).unwrap(), mb.distances(&g).unwrap());
                let (la, lb) = (argmin(&da), argmin(&db));
                // Distinct argmins only when the two best distances are within rounding.
                prop_assert!(la == lb || (da[la] - da[lb]).abs() < 1e-9 * da[lb].max(1.0));
            }
        }

        #[test]
        fn separation_ignores_label_order(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let out = Matrix::from_fn(30, 4, |_, _| rng.next_f64());
            let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
            let perm = [2usize, 0, 1];
            let permuted: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let a = separation(&relations_from_outputs(&out, &labels, 3, &RelationOptions::default()).unwrap()).unwrap();
            let b = separation(&relations_from_outputs(&out, &permuted, 3, &RelationOptions::default()).unwrap()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn coincident_relations_have_zero_separation(r in prop::collection::vec(-3.0f64..3.0, 3), k in 2usize..5) {
            let rel = identity_set(vec![r; k], 0.1);
            prop_assert_eq!(separation(&rel).unwrap(), 0.0);
        }
    }
}
