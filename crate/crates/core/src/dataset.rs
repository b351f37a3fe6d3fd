//! In-memory labelled image datasets, preprocessing and split management.
//!
//! Multi-channel images are stored planar: all of channel 0, then channel 1,
//! and so on, each channel row-major.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{Matrix, Rng};
use crate::{Error, Result};

/// Luma weights for R, G and B.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// A flat feature vector with no spatial structure.
    pub fn flat(features: usize) -> Self {
        Self::new(1, features, 1)
    }

    pub fn features(&self) -> usize {
        self.height * self.width * self.channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    labels: Vec<usize>,
    label_names: Vec<String>,
    shape: ImageShape,
}

impl Dataset {
    /// Checks that every feature lies in `[0, 1]`, every label indexes
    /// `label_names`, and the shape matches the feature count.
    pub fn new(x: Matrix, labels: Vec<usize>, label_names: Vec<String>, shape: ImageShape) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::InvalidData(format!("{} rows but {} labels", x.rows(), labels.len())));
        }
        if shape.features() != x.cols() {
            return Err(Error::InvalidData(format!(
                "shape {}x{}x{} does not match {} features",
                shape.height,
                shape.width,
                shape.channels,
                x.cols()
            )));
        }
        if let Some(pos) = x.as_slice().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidData(format!(
                "feature {} of row {} is {} (outside [0, 1])",
                pos % x.cols().max(1),
                pos / x.cols().max(1),
                x.as_slice()[pos]
            )));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= label_names.len()) {
            return Err(Error::InvalidData(format!(
                "label {l} of row {row} exceeds vocabulary of {}",
                label_names.len()
            )));
        }
        Ok(Self {
            x,
            labels,
            label_names,
            shape,
        })
    }

    /// Vocabulary `"0"`, `"1"`, ... for `classes` labels.
    pub fn numbered_labels(classes: usize) -> Vec<String> {
        (0..classes).map(|i| format!("{i}")).collect()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn into_parts(self) -> (Matrix, Vec<usize>, Vec<String>, ImageShape) {
        (self.x, self.labels, self.label_names, self.shape)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
            shape: self.shape,
        }
    }

    /// Keeps rows whose label is in `keep` and renumbers them `0..keep.len()`
    /// in the order given.
    pub fn select_classes(&self, keep: &[usize]) -> Result<Dataset> {
        let mut map = BTreeMap::new();
        for (new, &old) in keep.iter().enumerate() {
            if old >= self.num_classes() {
                return Err(Error::InvalidArgument(format!("class {old} not in vocabulary")));
            }
            if map.insert(old, new).is_some() {
                return Err(Error::InvalidArgument(format!("class {old} listed twice")));
            }
        }
        let rows: Vec<usize> = (0..self.len()).filter(|&i| map.contains_key(&self.labels[i])).collect();
        Ok(Dataset {
            x: self.x.select_rows(&rows),
            labels: rows.iter().map(|&i| map[&self.labels[i]]).collect(),
            label_names: keep.iter().map(|&c| self.label_names[c].clone()).collect(),
            shape: self.shape,
        })
    }

    pub fn one_hot(&self) -> Matrix {
        one_hot_unchecked(&self.labels, self.num_classes())
    }

    /// Luma conversion of a 3-channel dataset.
    pub fn to_grayscale(&self) -> Result<Dataset> {
        if self.shape.channels != 3 {
            return Err(Error::Shape {
                op: "to_grayscale",
                left: (self.shape.channels, 1),
                right: (3, 1),
            });
        }
        let plane = self.shape.height * self.shape.width;
        let mut out = Matrix::zeros(self.len(), plane);
        for i in 0..self.len() {
            let src = self.x.row(i);
            for (p, dst) in out.row_mut(i).iter_mut().enumerate() {
                let v = LUMA_WEIGHTS[0] * src[p] + LUMA_WEIGHTS[1] * src[plane + p] + LUMA_WEIGHTS[2] * src[2 * plane + p];
                *dst = v.clamp(0.0, 1.0);
            }
        }
        Ok(Dataset {
            x: out,
            labels: self.labels.clone(),
            label_names: self.label_names.clone(),
            shape: ImageShape::new(self.shape.height, self.shape.width, 1),
        })
    }

    /// Bilinear resampling of every channel with pixel centres at half-integer
    /// coordinates and edge clamping.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Dataset> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(format!("resize target {out_h}x{out_w}")));
        }
        let ImageShape { height, width, channels } = self.shape;
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("resize of an empty image".into()));
        }
        let ys = axis_taps(height, out_h);
        let xs = axis_taps(width, out_w);
        let (in_plane, out_plane) = (height * width, out_h * out_w);
        let mut out = Matrix::zeros(self.len(), out_plane * channels);
        for i in 0..self.len() {
            let src = self.x.row(i);
            let dst = out.row_mut(i);
            for c in 0..channels {
                let s = &src[c * in_plane..(c + 1) * in_plane];
                let d = &mut dst[c * out_plane..(c + 1) * out_plane];
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let top = s[y0 * width + x0] * (1.0 - fx) + s[y0 * width + x1] * fx;
                        let bottom = s[y1 * width + x0] * (1.0 - fx) + s[y1 * width + x1] * fx;
                        d[oy * out_w + ox] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
                    }
                }
            }
        }
        Ok(Dataset {
            x: out,
            labels: self.labels.clone(),
            label_names: self.label_names.clone(),
            shape: ImageShape::new(out_h, out_w, channels),
        })
    }

    pub fn split(&self, plan: &SplitPlan) -> Result<Vec<(Dataset, Dataset)>> {
        Ok(split_indices(&self.labels, self.num_classes(), plan)?
            .into_iter()
            .map(|f| (self.subset(&f.train), self.subset(&f.test)))
            .collect())
    }
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = libm::floor(src) as usize;
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn one_hot_unchecked(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        m.row_mut(i)[l] = 1.0;
    }
    m
}

/// One row per label with a single 1 in column `label`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {l} out of {classes} classes")));
    }
    Ok(one_hot_unchecked(labels, classes))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitKind {
    /// Stratified partition into `folds` test sets; each fold trains on the rest.
    KFold { folds: usize },
    /// One stratified split with `test_fraction` of each class held out.
    Holdout { test_fraction: f64 },
    /// Exactly `per_class[l]` training samples of class `l`; the rest is test.
    PerClassSubsample { per_class: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
}

impl SplitPlan {
    pub fn kfold(folds: usize, seed: u64) -> Self {
        Self {
            kind: SplitKind::KFold { folds },
            seed,
        }
    }

    pub fn holdout(test_fraction: f64, seed: u64) -> Self {
        Self {
            kind: SplitKind::Holdout { test_fraction },
            seed,
        }
    }

    pub fn per_class(per_class: Vec<usize>, seed: u64) -> Self {
        Self {
            kind: SplitKind::PerClassSubsample { per_class },
            seed,
        }
    }
}

/// Row indices of one train/test pair, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn shuffled_classes(labels: &[usize], classes: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for c in &mut by_class {
        rng.shuffle(c);
    }
    by_class
}

fn fold(mut train: Vec<usize>, mut test: Vec<usize>) -> Fold {
    train.sort_unstable();
    test.sort_unstable();
    Fold { train, test }
}

pub fn split_indices(labels: &[usize], classes: usize, plan: &SplitPlan) -> Result<Vec<Fold>> {
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {l} out of {classes} classes")));
    }
    let mut rng = Rng::new(plan.seed);
    let by_class = shuffled_classes(labels, classes, &mut rng);
    match &plan.kind {
        SplitKind::KFold { folds } => {
            let k = *folds;
            if k < 2 || k > labels.len() {
                return Err(Error::InvalidArgument(format!("{k} folds for {} samples", labels.len())));
            }
            // One pointer runs across all classes so fold sizes differ by at
            // most one overall and per-class counts by at most one per fold.
            let mut assigned = vec![Vec::new(); k];
            let mut ptr = 0;
            for c in &by_class {
                for &i in c {
                    assigned[ptr % k].push(i);
                    ptr += 1;
                }
            }
            Ok((0..k)
                .map(|f| {
                    let train = (0..k).filter(|&g| g != f).flat_map(|g| assigned[g].iter().copied()).collect();
                    fold(train, assigned[f].clone())
                })
                .collect())
        }
        SplitKind::Holdout { test_fraction } => {
            if !(0.0..=1.0).contains(test_fraction) {
                return Err(Error::InvalidArgument(format!("test fraction {test_fraction}")));
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for c in &by_class {
                let n_test = libm::round(c.len() as f64 * test_fraction) as usize;
                test.extend_from_slice(&c[..n_test]);
                train.extend_from_slice(&c[n_test..]);
            }
            Ok(vec![fold(train, test)])
        }
        SplitKind::PerClassSubsample { per_class } => {
            if per_class.len() != classes {
                return Err(Error::InvalidArgument(format!(
                    "{} per-class counts for {classes} classes",
                    per_class.len()
                )));
            }
            let shortfalls: Vec<String> = per_class
                .iter()
                .zip(&by_class)
                .enumerate()
                .filter(|(_, (&want, have))| want > have.len())
                .map(|(l, (want, have))| format!("class {l}: want {want}, have {}", have.len()))
                .collect();
            if !shortfalls.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "infeasible per-class counts ({})",
                    shortfalls.join("; ")
                )));
            }
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (c, &want) in by_class.iter().zip(per_class) {
                train.extend_from_slice(&c[..want]);
                test.extend_from_slice(&c[want..]);
            }
            Ok(vec![fold(train, test)])
        }
    }
}
