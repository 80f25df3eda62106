//! Diagnostic evaluators for the margin-based generalization analysis of the
//! similarity classifier. None of these gate clustering; at realistic sizes
//! the bounds exceed 1 and are only useful for checking orderings.

use nalgebra::DMatrix;

use crate::data_io::SampleMatrix;
use crate::disc_similarity::SimplexWeights;
use crate::error::{CdskError, Result};
use crate::kernel::{gram, KernelSpec};
use crate::spectral_core::{check_symmetric, eigh, PsdSplit};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub n: usize,
    pub c: usize,
    pub gamma: f64,
    pub delta: f64,
    pub b_plus: f64,
    pub b_minus: f64,
    pub r: f64,
}

impl BoundInputs {
    pub fn new(n: usize, c: usize, gamma: f64, delta: f64, b_plus: f64, b_minus: f64, r: f64) -> Result<Self> {
        if n == 0 {
            return Err(CdskError::Validation("n must be positive".into()));
        }
        if c < 2 {
            return Err(CdskError::Validation(format!("need at least 2 classes, got {}", c)));
        }
        if !(gamma > 0.0) {
            return Err(CdskError::Validation(format!("gamma must be > 0, got {}", gamma)));
        }
        check_delta(delta)?;
        if !(b_plus >= 0.0 && b_minus >= 0.0) {
            return Err(CdskError::Validation("B+ and B- must be >= 0".into()));
        }
        if !(r > 0.0) {
            return Err(CdskError::Validation(format!("R must be > 0, got {}", r)));
        }
        Ok(Self {
            n,
            c,
            gamma,
            delta,
            b_plus,
            b_minus,
            r,
        })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CdskError::Validation(format!("delta must lie in (0, 1), got {}", delta)));
    }
    Ok(())
}

/// Ramp loss `min(1, max(0, 1 - x))`.
pub fn phi(x: f64) -> f64 {
    (1.0 - x).clamp(0.0, 1.0)
}

fn margin_of_scores(scores: &[f64], y: usize) -> Result<f64> {
    if scores.len() < 2 {
        return Err(CdskError::Domain("a margin needs at least one competing class".into()));
    }
    if y == 0 || y > scores.len() {
        return Err(CdskError::Domain(format!("class {} is outside 1..={}", y, scores.len())));
    }
    let rival = scores
        .iter()
        .enumerate()
        .filter(|&(k, _)| k + 1 != y)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(scores[y - 1] - rival)
}

fn labels_of(train: &SampleMatrix) -> Result<(&[usize], usize)> {
    let labels = train
        .labels()
        .ok_or_else(|| CdskError::Domain("bounds need labeled data".into()))?;
    Ok((labels, train.n_classes().unwrap_or(0)))
}

/// `h(x, y) - max_{y' != y} h(x, y')`; nonnegative means classified correctly.
pub fn margin(x: &[f64], y: usize, train: &SampleMatrix, alpha: &SimplexWeights, spec: &KernelSpec) -> Result<f64> {
    let scores = crate::disc_similarity::hypothesis_scores(x, train, alpha, spec)?;
    margin_of_scores(&scores, y)
}

/// Margins of the training points under a similarity matrix `s`. Each score
/// includes the point's own term `a_i s_ii`.
pub fn training_margins(s: &DMatrix<f64>, labels: &[usize], c: usize, alpha: &SimplexWeights) -> Result<Vec<f64>> {
    let n = labels.len();
    if s.nrows() != n || s.ncols() != n || alpha.len() != n {
        return Err(CdskError::Shape(format!(
            "similarity {}x{}, {} labels, {} weights",
            s.nrows(),
            s.ncols(),
            n,
            alpha.len()
        )));
    }
    let a = alpha.as_slice();
    (0..n)
        .map(|i| {
            let mut scores = vec![0.0; c];
            for j in 0..n {
                scores[labels[j] - 1] += a[j] * s[(i, j)];
            }
            margin_of_scores(&scores, labels[i])
        })
        .collect()
}

/// Mean ramp loss `Phi(m_i / gamma)` over training points for a similarity matrix.
pub fn empirical_loss_with_similarity(
    s: &DMatrix<f64>,
    labels: &[usize],
    c: usize,
    alpha: &SimplexWeights,
    gamma: f64,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(CdskError::Validation(format!("gamma must be > 0, got {}", gamma)));
    }
    let m = training_margins(s, labels, c, alpha)?;
    Ok(m.iter().map(|v| phi(v / gamma)).sum::<f64>() / m.len() as f64)
}

/// Empirical ramp loss of the kernel classifier on its own training data.
pub fn empirical_loss(train: &SampleMatrix, alpha: &SimplexWeights, spec: &KernelSpec, gamma: f64) -> Result<f64> {
    let (labels, c) = labels_of(train)?;
    let k = gram(train, spec);
    empirical_loss_with_similarity(k.values(), labels, c, alpha, gamma)
}

/// Closed-form upper bound on the empirical loss:
/// `1 - 1/(n gamma) sum_ij (a_i+a_j)/2 S_ij + 1/(n gamma) sum_{i<j} 2 (a_i+a_j) S_ij 1{y_i != y_j}`.
///
/// Valid for `gamma >= 1` and a symmetric `S` with entries in `[0, 1]`.
pub fn empirical_loss_upper_bound(labels: &[usize], alpha: &SimplexWeights, gamma: f64, s: &DMatrix<f64>) -> Result<f64> {
    if !(gamma >= 1.0) {
        return Err(CdskError::Validation(format!("the bound requires gamma >= 1, got {}", gamma)));
    }
    let n = labels.len();
    if s.nrows() != n || s.ncols() != n || alpha.len() != n {
        return Err(CdskError::Shape("similarity, labels and weights disagree in size".into()));
    }
    check_symmetric(s)?;
    if s.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CdskError::Validation("similarity entries must lie in [0, 1]".into()));
    }
    let a = alpha.as_slice();
    let mut total = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += 0.5 * (a[i] + a[j]) * s[(i, j)];
            if i < j && labels[i] != labels[j] {
                cross += 2.0 * (a[i] + a[j]) * s[(i, j)];
            }
        }
    }
    let scale = 1.0 / (n as f64 * gamma);
    Ok(1.0 - scale * total + scale * cross)
}

/// `(sum_y a_y^T S+ a_y, sum_y a_y^T S- a_y)` over class slices of `a`.
pub fn omega_terms(split: &PsdSplit, alpha: &SimplexWeights, labels: &[usize]) -> Result<(f64, f64)> {
    let n = labels.len();
    if split.s_plus.nrows() != n || split.s_minus.nrows() != n || alpha.len() != n {
        return Err(CdskError::Shape("split, labels and weights disagree in size".into()));
    }
    let c = labels.iter().copied().max().unwrap_or(0);
    let mut plus = 0.0;
    let mut minus = 0.0;
    for y in 1..=c {
        let v = alpha.class_slice(labels, y);
        plus += v.dot(&(&split.s_plus * &v));
        minus += v.dot(&(&split.s_minus * &v));
    }
    Ok((plus, minus))
}

/// Bound on the expected classification error given the empirical loss:
/// `emp + 8 R (2c-1) c B / (gamma sqrt n) + (16 c (2c-1) B R^2 / gamma + 1) sqrt(ln(4/delta) / (2n))`
/// with `B = B+ + B-`.
pub fn generalization_bound(inputs: &BoundInputs, empirical: f64) -> f64 {
    let n = inputs.n as f64;
    let c = inputs.c as f64;
    let b = inputs.b_plus + inputs.b_minus;
    let complexity = 8.0 * inputs.r * (2.0 * c - 1.0) * c * b / (inputs.gamma * n.sqrt());
    let confidence = (16.0 * c * (2.0 * c - 1.0) * b * inputs.r * inputs.r / inputs.gamma + 1.0)
        * ((4.0 / inputs.delta).ln() / (2.0 * n)).sqrt();
    empirical + complexity + confidence
}

/// Rademacher complexity bound of the similarity hypothesis class:
/// `R (2c-1) c B / sqrt n + 2c (2c-1) B R^2 sqrt(ln(2/delta) / (2n))`.
pub fn rademacher_bound(inputs: &BoundInputs, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let n = inputs.n as f64;
    let c = inputs.c as f64;
    let b = inputs.b_plus + inputs.b_minus;
    Ok(inputs.r * (2.0 * c - 1.0) * c * b / n.sqrt()
        + 2.0 * c * (2.0 * c - 1.0) * b * inputs.r * inputs.r * ((2.0 / delta).ln() / (2.0 * n)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceCheck {
    /// `a^T S a`.
    pub lhs: f64,
    /// `c * sum_y a_y^T S a_y`.
    pub rhs: f64,
    pub holds: bool,
}

/// For PSD `S`, the full quadratic form is at most `c` times the sum of the
/// class-sliced forms.
pub fn class_slice_check(s: &DMatrix<f64>, alpha: &SimplexWeights, labels: &[usize], c: usize) -> Result<SliceCheck> {
    let n = labels.len();
    if s.nrows() != n || s.ncols() != n || alpha.len() != n {
        return Err(CdskError::Shape("matrix, labels and weights disagree in size".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > c) {
        return Err(CdskError::Domain(format!("label {} is outside 1..={}", bad, c)));
    }
    let min_eig = eigh(s)?.eigenvalues.min();
    if min_eig < -1e-8 {
        return Err(CdskError::Validation(format!(
            "matrix is not PSD (smallest eigenvalue {:e})",
            min_eig
        )));
    }
    let a = alpha.to_dvector();
    let lhs = a.dot(&(s * &a));
    let sliced: f64 = (1..=c)
        .map(|y| {
            let v = alpha.class_slice(labels, y);
            v.dot(&(s * &v))
        })
        .sum();
    let rhs = c as f64 * sliced;
    Ok(SliceCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-10,
    })
}
