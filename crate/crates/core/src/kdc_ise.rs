//! Weighted kernel density classification for two classes and the empirical
//! terms of its integrated-squared-error bound.
//!
//! Densities use the normalized Gaussian `tau0 * exp(-|x|^2 / (2 h^2))` with
//! `tau0 = (2 pi)^{-d/2} h^{-d}`. Products of two such kernels integrate to a
//! kernel of bandwidth `sqrt(2) h`, whose normalizer is `tau1`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::disc_similarity::SimplexWeights;
use crate::error::{CdskError, Result};
use crate::kernel::{gram_of_rows, sq_dist, KernelSpec};

/// Grid size of the composite trapezoid rule used by the quadrature checks.
pub const QUADRATURE_POINTS: usize = 20_001;

#[derive(Debug, Clone)]
pub struct KdeModel {
    points: DMatrix<f64>,
    alpha: SimplexWeights,
    labels: Vec<usize>,
    h: f64,
}

impl KdeModel {
    pub fn new(points: DMatrix<f64>, alpha: SimplexWeights, labels: Vec<usize>, h: f64) -> Result<Self> {
        let n = points.nrows();
        if n == 0 || points.ncols() == 0 {
            return Err(CdskError::Size("density model needs at least one point".into()));
        }
        if alpha.len() != n || labels.len() != n {
            return Err(CdskError::Shape(format!(
                "{} points, {} weights, {} labels",
                n,
                alpha.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l != 1 && l != 2) {
            return Err(CdskError::Domain(format!(
                "density classification is binary; found class {}",
                bad
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(CdskError::Config(format!("bandwidth must be > 0, got {}", h)));
        }
        Ok(Self {
            points,
            alpha,
            labels,
            h,
        })
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn alpha(&self) -> &SimplexWeights {
        &self.alpha
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn tau0(&self) -> f64 {
        1.0 / ((2.0 * PI).powf(self.d() as f64 / 2.0) * self.h.powi(self.d() as i32))
    }

    pub fn tau1(&self) -> f64 {
        let wide = 2f64.sqrt() * self.h;
        1.0 / ((2.0 * PI).powf(self.d() as f64 / 2.0) * wide.powi(self.d() as i32))
    }

    fn kernel(&self) -> KernelSpec {
        KernelSpec::new(self.h).expect("bandwidth validated")
    }

    fn weighted_sum(&self, x: &[f64], class: Option<usize>) -> Result<f64> {
        if x.len() != self.d() {
            return Err(CdskError::Shape(format!(
                "query has dimension {}, model has {}",
                x.len(),
                self.d()
            )));
        }
        let spec = self.kernel();
        let mut total = 0.0;
        for i in 0..self.n() {
            if class.map_or(true, |y| self.labels[i] == y) {
                let row: Vec<f64> = self.points.row(i).iter().copied().collect();
                total += self.alpha.as_slice()[i] * spec.from_sq_dist(sq_dist(x, &row));
            }
        }
        Ok(self.tau0() * total)
    }
}

/// Weighted density estimate `tau0 sum_i a_i K_h(x - x_i)`.
pub fn kde(x: &[f64], model: &KdeModel) -> Result<f64> {
    model.weighted_sum(x, None)
}

/// Class-restricted density estimate.
pub fn class_kde(x: &[f64], y: usize, model: &KdeModel) -> Result<f64> {
    if y != 1 && y != 2 {
        return Err(CdskError::Domain(format!("class must be 1 or 2, got {}", y)));
    }
    model.weighted_sum(x, Some(y))
}

/// `p(x, 1) - p(x, 2)`.
pub fn decision_value(x: &[f64], model: &KdeModel) -> Result<f64> {
    Ok(class_kde(x, 1, model)? - class_kde(x, 2, model)?)
}

/// Class 1 when the decision value is nonnegative, else class 2.
pub fn decide(x: &[f64], model: &KdeModel) -> Result<usize> {
    Ok(if decision_value(x, model)? >= 0.0 { 1 } else { 2 })
}

#[derive(Debug, Clone)]
pub struct IseTerms {
    pub hat_ise: f64,
    pub k_alpha: f64,
    pub s_ise: DMatrix<f64>,
}

/// The empirical error term, the `sqrt(2) h` regularizer and the induced
/// similarity `4 (a_i + a_j - lambda1 a_i a_j) K_h(x_i - x_j)`.
pub fn empirical_ise_terms(model: &KdeModel, lambda1: f64) -> IseTerms {
    let n = model.n();
    let a = model.alpha.as_slice();
    let y = &model.labels;
    let k = gram_of_rows(&model.points, &model.kernel());
    let wide = KernelSpec::new(2f64.sqrt() * model.h).expect("positive bandwidth");
    let k_wide = gram_of_rows(&model.points, &wide);

    let mut cross = 0.0;
    let mut all = 0.0;
    let mut quad = 0.0;
    let mut cross_quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            all += (a[i] + a[j]) * k[(i, j)];
            quad += a[i] * a[j] * k_wide[(i, j)];
            if i < j && y[i] != y[j] {
                cross += (a[i] + a[j]) * k[(i, j)];
                cross_quad += a[i] * a[j] * k_wide[(i, j)];
            }
        }
    }
    let s_ise = DMatrix::from_fn(n, n, |i, j| 4.0 * (a[i] + a[j] - lambda1 * a[i] * a[j]) * k[(i, j)]);
    IseTerms {
        hat_ise: 4.0 * cross - all,
        k_alpha: quad - 4.0 * cross_quad,
        s_ise,
    }
}

/// Closed form of `int (p(x,1) - p(x,2))^2 dx`:
/// `tau1 [sum_y a_y^T K' a_y - 2 sum_{i<j, y_i != y_j} a_i a_j K'_ij]` with `K'` at bandwidth `sqrt(2) h`.
pub fn decision_l2_norm(model: &KdeModel) -> f64 {
    let n = model.n();
    let a = model.alpha.as_slice();
    let wide = KernelSpec::new(2f64.sqrt() * model.h).expect("positive bandwidth");
    let k_wide = gram_of_rows(&model.points, &wide);
    let mut same = 0.0;
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            if model.labels[i] == model.labels[j] {
                same += a[i] * a[j] * k_wide[(i, j)];
            } else if i < j {
                cross += a[i] * a[j] * k_wide[(i, j)];
            }
        }
    }
    model.tau1() * (same - 2.0 * cross)
}

/// Right-hand side of the high-probability ISE bound with its additive slack
/// reported separately.
#[derive(Debug, Clone, Copy)]
pub struct IseBound {
    /// `tau0 / n * hat_ise + tau1 * K(a) + slack`.
    pub rhs: f64,
    /// `2 tau0 (1/(n-1) + eps)`.
    pub slack: f64,
    /// `1 - 2 n2 exp(-2 (n-1) eps^2) - 2 n exp(-2 n eps^2)`; may be negative
    /// when the bound is vacuous.
    pub confidence: f64,
}

pub fn ise_bound(model: &KdeModel, eps: f64) -> Result<IseBound> {
    let n = model.n();
    if n < 2 {
        return Err(CdskError::Size("the ISE bound needs n >= 2".into()));
    }
    if !(eps > 0.0) {
        return Err(CdskError::Config(format!("eps must be > 0, got {}", eps)));
    }
    let terms = empirical_ise_terms(model, 0.0);
    let nf = n as f64;
    let n2 = model.labels.iter().filter(|&&l| l == 2).count() as f64;
    let slack = 2.0 * model.tau0() * (1.0 / (nf - 1.0) + eps);
    let confidence = 1.0
        - 2.0 * n2 * (-2.0 * (nf - 1.0) * eps * eps).exp()
        - 2.0 * nf * (-2.0 * nf * eps * eps).exp();
    Ok(IseBound {
        rhs: model.tau0() / nf * terms.hat_ise + model.tau1() * terms.k_alpha + slack,
        slack,
        confidence,
    })
}

/// Composite trapezoid rule with `points` nodes on `[lo, hi]`.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    assert!(points >= 2, "trapezoid rule needs two nodes");
    let step = (hi - lo) / (points - 1) as f64;
    let interior: f64 = (1..points - 1).map(|k| f(lo + step * k as f64)).sum();
    step * (0.5 * (f(lo) + f(hi)) + interior)
}

/// Numeric and closed-form values of `int K_h(x - a) K_h(x - b) dx` in one
/// dimension, using unnormalized kernels; the closed form is
/// `sqrt(pi) h exp(-(a - b)^2 / (4 h^2))`.
pub fn gaussian_convolution_check(a: f64, b: f64, h: f64) -> Result<(f64, f64)> {
    let spec = KernelSpec::new(h)?;
    let lo = a.min(b) - 10.0 * h;
    let hi = a.max(b) + 10.0 * h;
    let numeric = trapezoid(
        |x| spec.from_sq_dist((x - a) * (x - a)) * spec.from_sq_dist((x - b) * (x - b)),
        lo,
        hi,
        QUADRATURE_POINTS,
    );
    let closed = PI.sqrt() * h * (-(a - b) * (a - b) / (4.0 * h * h)).exp();
    Ok((numeric, closed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_1d(xs: &[f64], alpha: &[f64], labels: &[usize], h: f64) -> KdeModel {
        KdeModel::new(
            DMatrix::from_column_slice(xs.len(), 1, xs),
            SimplexWeights::new(alpha.to_vec()).unwrap(),
            labels.to_vec(),
            h,
        )
        .unwrap()
    }

    fn random_model(n: usize, seed: u64) -> KdeModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=2)).collect();
        model_1d(&xs, &alpha, &labels, rng.gen_range(0.3..1.2))
    }

    #[test]
    fn peak_of_standard_gaussian() {
        let m = model_1d(&[0.7], &[1.0], &[1], 1.0);
        assert_relative_eq!(kde(&[0.7], &m).unwrap(), 0.3989423, epsilon = 1e-7);
        assert!(matches!(kde(&[0.0, 1.0], &m), Err(CdskError::Shape(_))));
    }

    #[test]
    fn density_integrates_to_one() {
        let m = random_model(3, 1);
        let xs = m.points().column(0);
        let lo = xs.min() - 8.0 * m.h();
        let hi = xs.max() + 8.0 * m.h();
        let mass = trapezoid(|x| kde(&[x], &m).unwrap(), lo, hi, QUADRATURE_POINTS);
        assert!((mass - 1.0).abs() < 1e-6);
        for k in 0..100 {
            let x = -10.0 + 0.2 * k as f64;
            assert!(kde(&[x], &m).unwrap() >= 0.0);
        }
    }

    #[test]
    fn class_densities() {
        let m = model_1d(&[0.0, 1.0], &[0.3, 0.7], &[1, 1], 0.5);
        assert_eq!(class_kde(&[0.2], 2, &m).unwrap(), 0.0);
        assert!(matches!(class_kde(&[0.2], 3, &m), Err(CdskError::Domain(_))));

        let m = model_1d(&[0.0, 3.0], &[0.7, 0.3], &[1, 2], 0.5);
        assert_relative_eq!(class_kde(&[3.0], 2, &m).unwrap(), 0.3 * m.tau0(), epsilon = 1e-15);

        let r = random_model(9, 2);
        for x in [-1.0, 0.0, 2.5] {
            let total = class_kde(&[x], 1, &r).unwrap() + class_kde(&[x], 2, &r).unwrap();
            assert!((total - kde(&[x], &r).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn decision_rule() {
        let m = model_1d(&[0.0, 10.0], &[0.5, 0.5], &[1, 2], 1.0);
        assert_eq!(decide(&[0.0], &m).unwrap(), 1);
        assert_eq!(decide(&[10.0], &m).unwrap(), 2);
        assert_eq!(decide(&[5.0], &m).unwrap(), 1);
        let swapped = model_1d(&[0.0, 10.0], &[0.5, 0.5], &[2, 1], 1.0);
        assert_eq!(decide(&[5.0], &swapped).unwrap(), 1);

        let r = random_model(20, 3);
        for k in 0..40 {
            let x = -4.0 + 0.2 * k as f64;
            let mut direct = 0.0;
            for i in 0..20 {
                let xi = r.points()[(i, 0)];
                let sign = if r.labels()[i] == 1 { 1.0 } else { -1.0 };
                direct += sign * r.alpha().as_slice()[i] * r.tau0()
                    * (-(x - xi) * (x - xi) / (2.0 * r.h() * r.h())).exp();
            }
            let expected = if direct >= 0.0 { 1 } else { 2 };
            assert_eq!(decide(&[x], &r).unwrap(), expected);
        }
    }

    #[test]
    fn rejects_non_binary_labels() {
        let err = KdeModel::new(
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            SimplexWeights::uniform(2),
            vec![1, 3],
            1.0,
        );
        assert!(matches!(err, Err(CdskError::Domain(_))));
    }

    #[test]
    fn ise_terms_single_class() {
        let r = random_model(6, 4);
        let one_class = KdeModel::new(r.points().clone(), r.alpha().clone(), vec![1; 6], r.h()).unwrap();
        let t = empirical_ise_terms(&one_class, 0.5);
        let k = gram_of_rows(r.points(), &KernelSpec::new(r.h()).unwrap());
        let a = r.alpha().as_slice();
        let mut all = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                all += (a[i] + a[j]) * k[(i, j)];
            }
        }
        assert_relative_eq!(t.hat_ise, -all, epsilon = 1e-12);
    }

    #[test]
    fn ise_two_point_hand_case() {
        let m = model_1d(&[0.0, 1.3], &[0.5, 0.5], &[1, 2], 0.8);
        let k = (-(1.3f64 * 1.3) / (2.0 * 0.64)).exp();
        let t = empirical_ise_terms(&m, 0.3);
        assert_relative_eq!(t.hat_ise, 2.0 * k - 2.0, epsilon = 1e-14);
    }

    #[test]
    fn convolution_closed_forms() {
        let (num, closed) = gaussian_convolution_check(0.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(closed, 1.7724539, epsilon = 1e-7);
        assert!(((num - closed) / closed).abs() < 1e-6);
        let (num, closed) = gaussian_convolution_check(0.0, 2.0, 1.0).unwrap();
        assert_relative_eq!(closed, 0.6520493, epsilon = 1e-7);
        assert!(((num - closed) / closed).abs() < 1e-6);
        let (_, base) = gaussian_convolution_check(0.3, 1.1, 0.7).unwrap();
        let (_, scaled) = gaussian_convolution_check(0.6, 2.2, 1.4).unwrap();
        assert_relative_eq!(scaled, 2.0 * base, epsilon = 1e-14);
    }

    #[test]
    fn ise_bound_parts() {
        let m = random_model(10, 5);
        let b = ise_bound(&m, 0.5).unwrap();
        assert_relative_eq!(b.slack, 2.0 * m.tau0() * (1.0 / 9.0 + 0.5), epsilon = 1e-14);
        let t = empirical_ise_terms(&m, 0.0);
        assert_relative_eq!(b.rhs - b.slack, m.tau0() / 10.0 * t.hat_ise + m.tau1() * t.k_alpha, epsilon = 1e-12);
        assert!(b.confidence < 1.0);
    }
}
