//! Discriminative similarity `S^K_ij = 2 (a_i + a_j - lambda a_i a_j) K_ij`,
//! its graph Laplacians, the relaxed clustering objective, and the weighted
//! similarity classifier.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data_io::SampleMatrix;
use crate::embedding::Embedding;
use crate::error::{CdskError, Result};
use crate::kernel::{eval_kernel, GramMatrix, KernelSpec};
use crate::spectral_core::{check_symmetric, PsdSplit};

const SIMPLEX_SUM_TOL: f64 = 1e-10;
const DEGREE_FLOOR: f64 = 1e-12;
/// Largest regularization weight for which `S^K` stays nonnegative.
pub const MAX_LAMBDA: f64 = 2.0;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(CdskError::Size("empty weight vector".into()));
        }
        if let Some(v) = alpha.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(CdskError::Validation(format!(
                "simplex weights must be finite and >= 0, found {}",
                v
            )));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(CdskError::Validation(format!(
                "simplex weights sum to {}, not 1",
                sum
            )));
        }
        Ok(Self(alpha))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// Unit mass on index `i`.
    pub fn vertex(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    /// Trusts the caller that `alpha` is already on the simplex.
    pub(crate) fn from_raw(alpha: Vec<f64>) -> Self {
        debug_assert!(alpha.iter().all(|&v| v >= 0.0));
        debug_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        Self(alpha)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    /// The class-`y` slice: weights of samples labelled `y`, zero elsewhere.
    pub fn class_slice(&self, labels: &[usize], y: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.0.len(),
            self.0
                .iter()
                .zip(labels)
                .map(|(&a, &l)| if l == y { a } else { 0.0 }),
        )
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = CdskError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

/// Similarity graph with its degree vector and Laplacians.
#[derive(Debug, Clone)]
pub struct DiscSimilarityGraph {
    pub s: DMatrix<f64>,
    pub degree: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub normalized_laplacian: DMatrix<f64>,
    pub lambda: f64,
}

impl DiscSimilarityGraph {
    /// Builds degrees and Laplacians for an arbitrary nonnegative symmetric
    /// similarity. Fails when some degree is below `1e-12 * max degree`.
    pub fn from_similarity(s: DMatrix<f64>, lambda: f64) -> Result<Self> {
        check_symmetric(&s)?;
        let n = s.nrows();
        let degree = DVector::from_iterator(n, s.row_iter().map(|r| r.sum()));
        let max_degree = degree.max();
        if !(max_degree > 0.0) {
            return Err(CdskError::Degenerate("every degree is zero".into()));
        }
        if let Some((i, d)) = degree
            .iter()
            .enumerate()
            .find(|(_, &d)| d < DEGREE_FLOOR * max_degree)
        {
            return Err(CdskError::Degenerate(format!(
                "degree of sample {} is {:.3e} (max {:.3e})",
                i + 1,
                d,
                max_degree
            )));
        }
        let mut laplacian = -s.clone();
        for i in 0..n {
            laplacian[(i, i)] += degree[i];
        }
        let inv_sqrt = degree.map(|d| 1.0 / d.sqrt());
        let normalized_laplacian = DMatrix::from_fn(n, n, |i, j| {
            let off = s[(i, j)] * inv_sqrt[i] * inv_sqrt[j];
            if i == j {
                1.0 - off
            } else {
                -off
            }
        });
        Ok(Self {
            s,
            degree,
            laplacian,
            normalized_laplacian,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0 && lambda <= MAX_LAMBDA) {
        return Err(CdskError::Config(format!(
            "lambda must satisfy 0 < lambda <= 2 to keep S^K nonnegative, got {}",
            lambda
        )));
    }
    Ok(())
}

fn check_alpha_len(alpha: &SimplexWeights, n: usize) -> Result<()> {
    if alpha.len() != n {
        return Err(CdskError::Shape(format!(
            "{} weights for {} samples",
            alpha.len(),
            n
        )));
    }
    Ok(())
}

/// `S^K_ij = 2 (a_i + a_j - lambda a_i a_j) K_ij`.
pub fn disc_similarity_matrix(k: &GramMatrix, alpha: &SimplexWeights, lambda: f64) -> DMatrix<f64> {
    let a = alpha.as_slice();
    let kv = k.values();
    DMatrix::from_fn(kv.nrows(), kv.ncols(), |i, j| {
        2.0 * (a[i] + a[j] - lambda * a[i] * a[j]) * kv[(i, j)]
    })
}

pub fn disc_similarity(
    k: &GramMatrix,
    alpha: &SimplexWeights,
    lambda: f64,
) -> Result<DiscSimilarityGraph> {
    check_lambda(lambda)?;
    check_alpha_len(alpha, k.n())?;
    DiscSimilarityGraph::from_similarity(disc_similarity_matrix(k, alpha, lambda), lambda)
}

/// General-similarity variant
/// `2 (a_i + a_j) S_ij - 2 lambda a_i a_j S+_ij - 2 lambda a_i a_j S-_ij`.
pub fn general_disc_similarity(
    s_raw: &DMatrix<f64>,
    split: &PsdSplit,
    alpha: &SimplexWeights,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_symmetric(s_raw)?;
    let n = s_raw.nrows();
    check_alpha_len(alpha, n)?;
    if s_raw.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CdskError::Validation(
            "similarity entries must lie in [0, 1]".into(),
        ));
    }
    if split.s_plus.shape() != s_raw.shape() || split.s_minus.shape() != s_raw.shape() {
        return Err(CdskError::Shape("split does not match similarity shape".into()));
    }
    let mismatch = (&split.s_plus - &split.s_minus - s_raw).norm();
    if mismatch > 1e-8 * s_raw.norm().max(1.0) {
        return Err(CdskError::Validation(format!(
            "split does not reconstruct the similarity (error {:.3e})",
            mismatch
        )));
    }
    let a = alpha.as_slice();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let cross = 2.0 * lambda * a[i] * a[j];
        2.0 * (a[i] + a[j]) * s_raw[(i, j)] - cross * split.s_plus[(i, j)]
            - cross * split.s_minus[(i, j)]
    }))
}

/// `Tr(Y^T L Y)`, cross-checked against `1/2 sum_ij S_ij |Y_i - Y_j|^2`.
pub fn laplacian_trace(y: &Embedding, graph: &DiscSimilarityGraph) -> Result<f64> {
    let ym = y.matrix();
    if ym.nrows() != graph.n() {
        return Err(CdskError::Shape(format!(
            "embedding has {} rows, graph has {} nodes",
            ym.nrows(),
            graph.n()
        )));
    }
    let direct = (ym.transpose() * &graph.laplacian * ym).trace();
    let pairwise = pairwise_laplacian_trace(ym, &graph.s);
    let scale = direct.abs().max(pairwise.abs()).max(1.0);
    if (direct - pairwise).abs() > 1e-8 * scale {
        return Err(CdskError::Numeric(format!(
            "Laplacian trace forms disagree: {} vs {}",
            direct, pairwise
        )));
    }
    Ok(direct)
}

pub(crate) fn pairwise_laplacian_trace(y: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    let n = y.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = (y.row(i) - y.row(j)).norm_squared();
            total += s[(i, j)] * d2;
        }
    }
    total
}

/// `-sum_ij (a_i + a_j)/2 K_ij + lambda a^T K a`, with the first sum taken as `a^T K 1`.
pub fn objective_tail(k: &GramMatrix, alpha: &SimplexWeights, lambda: f64) -> f64 {
    let row_sums = k.row_sums();
    let linear: f64 = alpha.iter().zip(&row_sums).map(|(a, d)| a * d).sum();
    let av = alpha.to_dvector();
    let quad = av.dot(&(k.values() * &av));
    -linear + lambda * quad
}

/// The relaxed objective `1/2 Tr(Y^T L^K Y) - sum_ij (a_i+a_j)/2 K_ij + lambda a^T K a`.
pub fn cdsk_objective(
    y: &Embedding,
    graph: &DiscSimilarityGraph,
    k: &GramMatrix,
    alpha: &SimplexWeights,
) -> Result<f64> {
    Ok(0.5 * laplacian_trace(y, graph)? + objective_tail(k, alpha, graph.lambda))
}

/// The coordinate-descent objective with the full Laplacian trace:
/// `Tr(Y^T L^K Y) - sum_ij (a_i+a_j)/2 K_ij + lambda a^T K a`.
/// This is the quantity both alternating subproblems decrease.
pub fn descent_objective(
    y: &Embedding,
    graph: &DiscSimilarityGraph,
    k: &GramMatrix,
    alpha: &SimplexWeights,
) -> Result<f64> {
    Ok(laplacian_trace(y, graph)? + objective_tail(k, alpha, graph.lambda))
}

fn check_class(train: &SampleMatrix, y: usize) -> Result<(&[usize], usize)> {
    let labels = train
        .labels()
        .ok_or_else(|| CdskError::Domain("training data carries no labels".into()))?;
    let c = train.n_classes().unwrap_or(0);
    if y == 0 || y > c {
        return Err(CdskError::Domain(format!(
            "class {} is outside 1..={}",
            y, c
        )));
    }
    Ok((labels, c))
}

fn class_scores(
    x: &[f64],
    train: &SampleMatrix,
    alpha: &SimplexWeights,
    spec: &KernelSpec,
) -> Result<Vec<f64>> {
    let labels = train
        .labels()
        .ok_or_else(|| CdskError::Domain("training data carries no labels".into()))?;
    check_alpha_len(alpha, train.n())?;
    let c = train.n_classes().unwrap_or(0);
    let mut scores = vec![0.0; c];
    for i in 0..train.n() {
        scores[labels[i] - 1] += alpha.as_slice()[i] * eval_kernel(x, &train.row(i), spec)?;
    }
    Ok(scores)
}

/// Class scores `h(x, y) = sum_{i: y_i = y} a_i K(x, x_i)` for `y = 1..=c`.
pub fn hypothesis_scores(
    x: &[f64],
    train: &SampleMatrix,
    alpha: &SimplexWeights,
    spec: &KernelSpec,
) -> Result<Vec<f64>> {
    class_scores(x, train, alpha, spec)
}

pub fn hypothesis_score(
    x: &[f64],
    y: usize,
    train: &SampleMatrix,
    alpha: &SimplexWeights,
    spec: &KernelSpec,
) -> Result<f64> {
    check_class(train, y)?;
    Ok(class_scores(x, train, alpha, spec)?[y - 1])
}

/// Index (1-based) of the largest score; ties go to the smallest id.
pub(crate) fn argmax_class(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best + 1
}

/// `argmax_y h(x, y)`, ties toward the smaller class id.
pub fn classify(
    x: &[f64],
    train: &SampleMatrix,
    alpha: &SimplexWeights,
    spec: &KernelSpec,
) -> Result<usize> {
    Ok(argmax_class(&class_scores(x, train, alpha, spec)?))
}
