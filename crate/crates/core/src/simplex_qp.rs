//! Quadratic programs over the probability simplex.
//!
//! The alpha subproblem of the coordinate descent is
//! `min_a a^T A a + b^T a` subject to `a >= 0, sum(a) = 1`. It is solved by
//! two-coordinate (SMO) descent: each step moves mass from the coordinate with
//! the largest gradient among those holding mass to the coordinate with the
//! smallest gradient, exactly minimizing along that edge direction. `A` may be
//! indefinite, so after reaching a KKT point the solver also compares against
//! the best vertex and the best point on any edge of the simplex and restarts
//! from there when that is lower.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::SampleMatrix;
use crate::disc_similarity::SimplexWeights;
use crate::embedding::Embedding;
use crate::error::{CdskError, Result};
use crate::kernel::GramMatrix;
use crate::spectral_core::check_symmetric;

pub const DEFAULT_QP_TOL: f64 = 1e-6;
/// Sparsity weight used by [`init_alpha_sparse`] when none is given.
pub const DEFAULT_SPARSITY_TAU: f64 = 0.1;

/// `q(a) = a^T A a + b^T a + constant`.
#[derive(Debug, Clone)]
pub struct SimplexQP {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub constant: f64,
}

impl SimplexQP {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, constant: f64) -> Result<Self> {
        check_symmetric(&a)?;
        if a.nrows() != b.len() {
            return Err(CdskError::Shape(format!(
                "quadratic term is {}x{}, linear term has {} entries",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        Ok(Self { a, b, constant })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let v = DVector::from_column_slice(alpha);
        v.dot(&(&self.a * &v)) + self.b.dot(&v) + self.constant
    }

    pub fn gradient(&self, alpha: &[f64]) -> DVector<f64> {
        let v = DVector::from_column_slice(alpha);
        (&self.a * &v) * 2.0 + &self.b
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub alpha: SimplexWeights,
    pub objective: f64,
    /// `max_{i: a_i > 0} g_i - min_j g_j` at the returned point.
    pub kkt_residual: f64,
    /// Number of accepted pair updates.
    pub iterations: usize,
    pub converged: bool,
}

/// Builds the alpha subproblem for a fixed embedding.
///
/// With `M_ij = K_ij |Y_i - Y_j|^2`, `m = M 1` and `d = K 1`, the objective
/// `Tr(Y^T L^K Y) - sum_ij (a_i + a_j)/2 K_ij + lambda a^T K a` equals
/// `a^T (lambda K - lambda M) a + (2m - d)^T a`.
pub fn assemble_alpha_qp(y: &Embedding, k: &GramMatrix, lambda: f64) -> Result<SimplexQP> {
    let ym = y.matrix();
    let n = k.n();
    if ym.nrows() != n {
        return Err(CdskError::Shape(format!(
            "embedding has {} rows, kernel has {}",
            ym.nrows(),
            n
        )));
    }
    let kv = k.values();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = kv[(i, j)] * (ym.row(i) - ym.row(j)).norm_squared();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let m_rows = DVector::from_iterator(n, m.row_iter().map(|r| r.sum()));
    let d = DVector::from_column_slice(&k.row_sums());
    let a = (kv - &m) * lambda;
    let b = m_rows * 2.0 - d;
    SimplexQP::new(a, b, 0.0)
}

fn check_feasible(start: &SimplexWeights, n: usize) -> Result<()> {
    if start.len() != n {
        return Err(CdskError::Validation(format!(
            "start has {} entries, problem has {}",
            start.len(),
            n
        )));
    }
    Ok(())
}

fn kkt_residual(alpha: &[f64], grad: &DVector<f64>) -> f64 {
    let lowest = grad.min();
    let highest_active = alpha
        .iter()
        .zip(grad.iter())
        .filter(|(&a, _)| a > 0.0)
        .map(|(_, &g)| g)
        .fold(f64::NEG_INFINITY, f64::max);
    (highest_active - lowest).max(0.0)
}

struct SmoState<'a> {
    qp: &'a SimplexQP,
    alpha: Vec<f64>,
    grad: DVector<f64>,
    iterations: usize,
}

impl<'a> SmoState<'a> {
    fn new(qp: &'a SimplexQP, alpha: Vec<f64>) -> Self {
        let grad = qp.gradient(&alpha);
        Self {
            qp,
            alpha,
            grad,
            iterations: 0,
        }
    }

    fn reset(&mut self, alpha: Vec<f64>) {
        self.grad = self.qp.gradient(&alpha);
        self.alpha = alpha;
    }

    /// Most violating pair `(from, to)`: mass leaves `from`, enters `to`.
    fn violating_pair(&self) -> (usize, usize, f64) {
        let mut from = usize::MAX;
        let mut to = 0;
        for k in 0..self.alpha.len() {
            if self.alpha[k] > 0.0 && (from == usize::MAX || self.grad[k] > self.grad[from]) {
                from = k;
            }
            if self.grad[k] < self.grad[to] {
                to = k;
            }
        }
        (from, to, self.grad[from] - self.grad[to])
    }

    /// One exact line minimization along `e_to - e_from`. Returns false when no
    /// decrease is possible.
    fn step(&mut self, from: usize, to: usize) -> bool {
        let a = &self.qp.a;
        let slope = self.grad[to] - self.grad[from];
        if from == to || slope >= 0.0 {
            return false;
        }
        let curvature = a[(from, from)] + a[(to, to)] - 2.0 * a[(from, to)];
        let cap = self.alpha[from];
        let t = if curvature > 0.0 {
            (-slope / (2.0 * curvature)).min(cap)
        } else {
            // nonconvex along the edge: the far endpoint is the minimum
            cap
        };
        if !(t > 0.0) {
            return false;
        }
        if t >= cap {
            self.alpha[from] = 0.0;
        } else {
            self.alpha[from] -= t;
        }
        self.alpha[to] += t;
        let shift = (a.column(to) - a.column(from)) * (2.0 * t);
        self.grad += shift;
        self.iterations += 1;
        true
    }

    /// Runs pair updates until the KKT residual is within `tol` or the budget is spent.
    fn descend(&mut self, tol: f64, max_iterations: usize) -> bool {
        let n = self.alpha.len();
        let refresh = n.max(16);
        let mut since_refresh = 0;
        loop {
            let (from, to, gap) = self.violating_pair();
            if gap <= tol {
                // re-derive the gradient before trusting an incrementally updated one
                self.grad = self.qp.gradient(&self.alpha);
                let (_, _, exact_gap) = self.violating_pair();
                if exact_gap <= tol {
                    return true;
                }
                continue;
            }
            if self.iterations >= max_iterations {
                return false;
            }
            if !self.step(from, to) {
                self.grad = self.qp.gradient(&self.alpha);
                let (f2, t2, _) = self.violating_pair();
                if !self.step(f2, t2) {
                    return kkt_residual(&self.alpha, &self.grad) <= tol;
                }
            }
            since_refresh += 1;
            if since_refresh >= refresh {
                self.grad = self.qp.gradient(&self.alpha);
                since_refresh = 0;
            }
        }
    }
}

/// Lowest point over all vertices and edges of the simplex.
fn best_vertex_or_edge(qp: &SimplexQP) -> (Vec<f64>, f64) {
    let n = qp.n();
    let a = &qp.a;
    let b = &qp.b;
    let mut best = (0usize, 0usize, 0.0f64);
    let mut best_val = f64::INFINITY;
    for k in 0..n {
        let v = a[(k, k)] + b[k];
        if v < best_val {
            best_val = v;
            best = (k, k, 0.0);
        }
    }
    for k in 0..n {
        for l in (k + 1)..n {
            // q((1-s) e_k + s e_l) = A_kk + s (b_l - b_k + 2 A_kl - 2 A_kk)
            //                        + s^2 (A_kk + A_ll - 2 A_kl) + b_k
            let base = a[(k, k)] + b[k];
            let lin = b[l] - b[k] + 2.0 * a[(k, l)] - 2.0 * a[(k, k)];
            let quad = a[(k, k)] + a[(l, l)] - 2.0 * a[(k, l)];
            if quad > 0.0 {
                let s = -lin / (2.0 * quad);
                if s > 0.0 && s < 1.0 {
                    let v = base + s * lin + s * s * quad;
                    if v < best_val {
                        best_val = v;
                        best = (k, l, s);
                    }
                }
            }
        }
    }
    let mut alpha = vec![0.0; n];
    alpha[best.0] += 1.0 - best.2;
    alpha[best.1] += best.2;
    (alpha, best_val + qp.constant)
}

/// Two-coordinate descent from a feasible start. `max_passes` bounds the total
/// number of pair updates. Exhausting it is reported through
/// [`QpSolution::converged`], not as an error.
pub fn solve_smo(
    qp: &SimplexQP,
    start: &SimplexWeights,
    tol: f64,
    max_passes: usize,
) -> Result<QpSolution> {
    let n = qp.n();
    check_feasible(start, n)?;
    if !(tol > 0.0) {
        return Err(CdskError::Config(format!("tolerance must be > 0, got {}", tol)));
    }
    let mut state = SmoState::new(qp, start.as_slice().to_vec());
    let mut converged = state.descend(tol, max_passes);
    let mut value = qp.objective(&state.alpha);

    // Escape KKT points of an indefinite problem that sit above a vertex or edge minimum.
    if converged {
        loop {
            let (candidate, cand_val) = best_vertex_or_edge(qp);
            let margin = 1e-12 * value.abs().max(1.0);
            if cand_val >= value - margin {
                break;
            }
            let saved = (state.alpha.clone(), state.grad.clone());
            state.reset(candidate);
            converged = state.descend(tol, max_passes);
            let new_val = qp.objective(&state.alpha);
            if new_val < value {
                value = new_val;
            } else {
                state.alpha = saved.0;
                state.grad = saved.1;
                break;
            }
            if !converged {
                break;
            }
        }
    }

    let grad = qp.gradient(&state.alpha);
    let residual = kkt_residual(&state.alpha, &grad);
    Ok(QpSolution {
        objective: qp.objective(&state.alpha),
        alpha: SimplexWeights::from_raw(state.alpha),
        kkt_residual: residual,
        iterations: state.iterations,
        converged: converged && residual <= tol,
    })
}

pub fn default_max_passes(n: usize) -> usize {
    100 * n
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    out
}

fn support_weights(h: &DMatrix<f64>, rhs: &DVector<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let hs = DMatrix::from_fn(support.len(), support.len(), |p, q| h[(support[p], support[q])]);
    let rs = DVector::from_iterator(support.len(), support.iter().map(|&j| rhs[j]));
    hs.cholesky().map(|c| c.solve(&rs))
}

/// Sparse starting weights from greedy self-representation.
///
/// Approximately minimizes `sum_i |x_i - sum_{j != i} a_j x_j|^2 + tau |a|_0` by
/// forward selection: each round adds the column whose inclusion most reduces
/// the reconstruction residual, stopping once the best reduction falls below
/// `tau` or the refitted support weights would stop being positive. The least-squares weights on the support are projected onto the
/// simplex. Selections that end with fewer than two positive weights fall back
/// to uniform weights. `seed` fixes the scan order used to break exact ties.
pub fn init_alpha_sparse(data: &SampleMatrix, tau: f64, seed: u64) -> SimplexWeights {
    let n = data.n();
    if n < 3 || tau.is_nan() {
        return SimplexWeights::uniform(n);
    }
    let x = data.data();
    let g = x * x.transpose();
    // residual(a) = C - 2 r^T a + a^T H a with H_jk = G_jk (n - 2 + [j = k])
    let h = DMatrix::from_fn(n, n, |j, k| {
        g[(j, k)] * ((n - 2) as f64 + if j == k { 1.0 } else { 0.0 })
    });
    let rhs = DVector::from_iterator(n, (0..n).map(|j| g.row(j).sum() - g[(j, j)]));

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut support: Vec<usize> = Vec::new();
    // rows of L^{-1} H_{S, *}, one per selected index
    let mut proj: Vec<DVector<f64>> = Vec::new();
    let mut proj_norm2 = DVector::<f64>::zeros(n);
    // L^{-1} rhs_S, one entry per selected index
    let mut proj_rhs: Vec<f64> = Vec::new();
    let mut selected = vec![false; n];

    while support.len() < n {
        let mut best: Option<(usize, f64, f64)> = None;
        for &j in &order {
            if selected[j] {
                continue;
            }
            let schur = h[(j, j)] - proj_norm2[j];
            if !(schur > 1e-12 * h[(j, j)].abs().max(f64::MIN_POSITIVE)) {
                continue;
            }
            let cross: f64 = proj.iter().zip(&proj_rhs).map(|(p, r)| p[j] * r).sum();
            let correlation = rhs[j] - cross;
            let reduction = correlation * correlation / schur;
            if best.map_or(true, |(_, r, _)| reduction > r) {
                best = Some((j, reduction, schur));
            }
        }
        let Some((j, reduction, schur)) = best else { break };
        if !(reduction >= tau) {
            break;
        }
        // Keep the support weights positive; a sign flip means the new column
        // only helps by cancelling mass elsewhere.
        let mut trial = support.clone();
        trial.push(j);
        if !support_weights(&h, &rhs, &trial).is_some_and(|w| w.iter().all(|&v| v > 0.0)) {
            break;
        }
        let diag = schur.sqrt();
        let mut row = DVector::zeros(n);
        for k in 0..n {
            let prior: f64 = proj.iter().map(|p| p[j] * p[k]).sum();
            row[k] = (h[(j, k)] - prior) / diag;
        }
        let cross: f64 = proj.iter().zip(&proj_rhs).map(|(p, r)| p[j] * r).sum();
        proj_rhs.push((rhs[j] - cross) / diag);
        for k in 0..n {
            proj_norm2[k] += row[k] * row[k];
        }
        proj.push(row);
        support.push(j);
        selected[j] = true;
    }

    if support.len() < 2 {
        return SimplexWeights::uniform(n);
    }
    let Some(weights) = support_weights(&h, &rhs, &support) else {
        return SimplexWeights::uniform(n);
    };
    let mut full = vec![0.0; n];
    for (p, &j) in support.iter().enumerate() {
        full[j] = weights[p].max(0.0);
    }
    if full.iter().filter(|&&v| v > 0.0).count() < 2 {
        return SimplexWeights::uniform(n);
    }
    let projected = project_to_simplex(&full);
    if projected.iter().filter(|&&v| v > 0.0).count() < 2 {
        return SimplexWeights::uniform(n);
    }
    SimplexWeights::from_raw(projected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disc_similarity::{descent_objective, disc_similarity};
    use crate::kernel::{gram, KernelSpec};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn qp(a: &[f64], b: &[f64]) -> SimplexQP {
        let n = b.len();
        SimplexQP::new(DMatrix::from_row_slice(n, n, a), DVector::from_column_slice(b), 0.0).unwrap()
    }

    #[test]
    fn identity_gives_barycenter() {
        let p = qp(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]);
        let start = SimplexWeights::vertex(3, 0);
        let sol = solve_smo(&p, &start, 1e-10, 10_000).unwrap();
        for &a in sol.alpha.iter() {
            assert_relative_eq!(a, 1.0 / 3.0, epsilon = 1e-8);
        }
        assert_relative_eq!(sol.objective, 1.0 / 3.0, epsilon = 1e-10);
        assert!(sol.converged);
    }

    #[test]
    fn diagonal_weights() {
        let p = qp(&[1.0, 0.0, 0.0, 100.0], &[0.0, 0.0]);
        let sol = solve_smo(&p, &SimplexWeights::uniform(2), 1e-10, 1000).unwrap();
        assert_relative_eq!(sol.alpha.as_slice()[0], 100.0 / 101.0, epsilon = 1e-9);
        assert_relative_eq!(sol.alpha.as_slice()[1], 1.0 / 101.0, epsilon = 1e-9);
        assert_relative_eq!(sol.objective, 100.0 / 101.0, epsilon = 1e-9);
        // brute force over the 1-simplex
        let brute = (0..=100_000)
            .map(|k| {
                let t = k as f64 / 100_000.0;
                t * t + 100.0 * (1.0 - t) * (1.0 - t)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(sol.objective <= brute + 1e-12);
    }

    #[test]
    fn linear_program_picks_smallest_coefficient() {
        let p = qp(&[0.0; 9], &[0.0, 1.0, 1.0]);
        let sol = solve_smo(&p, &SimplexWeights::uniform(3), 1e-8, 1000).unwrap();
        assert_eq!(sol.alpha.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn infeasible_start_rejected() {
        let p = qp(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        assert!(matches!(
            solve_smo(&p, &SimplexWeights::uniform(3), 1e-6, 10),
            Err(CdskError::Validation(_))
        ));
    }

    #[test]
    fn exhausted_budget_is_not_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = DMatrix::from_fn(30, 30, |_, _| rng.gen_range(-1.0..1.0));
        let a = &b * b.transpose();
        let p = SimplexQP::new(a, DVector::from_fn(30, |_, _| rng.gen_range(-1.0..1.0)), 0.0).unwrap();
        let start = SimplexWeights::uniform(30);
        let sol = solve_smo(&p, &start, 1e-14, 2).unwrap();
        assert!(!sol.converged);
        assert!(sol.iterations <= 2);
        assert!(sol.objective <= p.objective(start.as_slice()));
    }

    #[test]
    fn indefinite_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let a = (&m + m.transpose()) * 0.5;
            let b = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
            let p = SimplexQP::new(a, b, 0.0).unwrap();
            let sol = solve_smo(&p, &SimplexWeights::uniform(4), 1e-9, 10_000).unwrap();
            let mut grid_min = f64::INFINITY;
            for i in 0..=100 {
                for j in 0..=(100 - i) {
                    for k in 0..=(100 - i - j) {
                        let l = 100 - i - j - k;
                        let v = [i, j, k, l].map(|c| c as f64 / 100.0);
                        grid_min = grid_min.min(p.objective(&v));
                    }
                }
            }
            assert!(sol.objective <= grid_min + 1e-3);
        }
    }

    #[test]
    fn projection_onto_simplex() {
        assert_eq!(project_to_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        let p = project_to_simplex(&[2.0, 0.0, -1.0]);
        assert_eq!(p, vec![1.0, 0.0, 0.0]);
        let p = project_to_simplex(&[0.6, 0.6, 0.0]);
        assert_relative_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    fn random_instance(n: usize, seed: u64) -> (Embedding, GramMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let k = gram(&SampleMatrix::from_rows(&rows, None).unwrap(), &KernelSpec::new(1.0).unwrap());
        let y = Embedding::from_matrix(DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0)));
        (y, k)
    }

    #[test]
    fn assembly_for_collapsed_embedding() {
        let (_, k) = random_instance(5, 3);
        let y = Embedding::from_matrix(DMatrix::from_element(5, 2, 0.7));
        let p = assemble_alpha_qp(&y, &k, 0.4).unwrap();
        assert!((&p.a - k.values() * 0.4).amax() < 1e-15);
        let d = DVector::from_column_slice(&k.row_sums());
        assert!((&p.b + d).amax() < 1e-15);
        assert_eq!(p.constant, 0.0);
    }

    #[test]
    fn assembly_two_point_symbolic() {
        let k12 = 0.3f64;
        let dist = (-2.0 * k12.ln()).sqrt();
        let k = gram(&SampleMatrix::from_rows(&[vec![0.0], vec![dist]], None).unwrap(), &KernelSpec::new(1.0).unwrap());
        let y = Embedding::from_matrix(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]));
        let lambda = 0.5;
        let p = assemble_alpha_qp(&y, &k, lambda).unwrap();
        // M_12 = k12 * 4; m = (4 k12, 4 k12); d = (1 + k12, 1 + k12)
        let m12 = 4.0 * k12;
        assert_relative_eq!(p.a[(0, 0)], lambda, epsilon = 1e-15);
        assert_relative_eq!(p.a[(0, 1)], lambda * (k12 - m12), epsilon = 1e-15);
        assert_relative_eq!(p.b[0], 2.0 * m12 - (1.0 + k12), epsilon = 1e-15);
        assert_relative_eq!(p.b[1], 2.0 * m12 - (1.0 + k12), epsilon = 1e-15);
    }

    #[test]
    fn assembly_matches_descent_objective() {
        let (y, k) = random_instance(7, 4);
        let lambda = 0.8;
        let p = assemble_alpha_qp(&y, &k, lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..7).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let alpha = SimplexWeights::new(raw.iter().map(|v| v / s).collect()).unwrap();
            let g = disc_similarity(&k, &alpha, lambda).unwrap();
            let direct = descent_objective(&y, &g, &k, &alpha).unwrap();
            assert_relative_eq!(p.objective(alpha.as_slice()), direct, epsilon = 1e-8, max_relative = 1e-8);
        }
    }

    #[test]
    fn sparse_init_uniform_fallback() {
        let data = SampleMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.5], vec![1.0, 3.0]], None).unwrap();
        let alpha = init_alpha_sparse(&data, f64::INFINITY, 0);
        assert!(alpha.iter().all(|&a| a == 1.0 / 3.0));
    }

    #[test]
    fn sparse_init_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let data = SampleMatrix::from_rows(&rows, None).unwrap();
        let a = init_alpha_sparse(&data, 0.1, 5);
        let b = init_alpha_sparse(&data, 0.1, 5);
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    /// Enumerates supports, solving the equality-constrained KKT system on
    /// each and keeping the best feasible stationary point.
    fn active_set_minimum(p: &SimplexQP) -> f64 {
        let n = p.n();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) {
            let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
            let k = support.len();
            let mut lhs = DMatrix::zeros(k + 1, k + 1);
            let mut rhs = DVector::zeros(k + 1);
            for (r, &i) in support.iter().enumerate() {
                for (c, &j) in support.iter().enumerate() {
                    lhs[(r, c)] = 2.0 * p.a[(i, j)];
                }
                lhs[(r, k)] = 1.0;
                lhs[(k, r)] = 1.0;
                rhs[r] = -p.b[i];
            }
            rhs[k] = 1.0;
            let Some(sol) = lhs.lu().solve(&rhs) else { continue };
            if (0..k).any(|r| sol[r] < -1e-12) {
                continue;
            }
            let mut alpha = vec![0.0; n];
            for (r, &i) in support.iter().enumerate() {
                alpha[i] = sol[r].max(0.0);
            }
            best = best.min(p.objective(&alpha));
        }
        best
    }

    #[test]
    fn convex_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..60 {
            let n = 2 + trial % 5;
            let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let a = &m * m.transpose() + DMatrix::identity(n, n) * 0.1;
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let p = SimplexQP::new(a, b, 0.0).unwrap();
            let sol = solve_smo(&p, &SimplexWeights::uniform(n), 1e-10, 100_000).unwrap();
            assert!(sol.converged);
            assert!(sol.kkt_residual <= 1e-6);
            assert!((sol.objective - active_set_minimum(&p)).abs() < 1e-6);
        }
    }

    #[test]
    fn sparse_init_duplicate_twin() {
        // Points 1 and 2 coincide; the third sits on the other axis.
        let data = SampleMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]], None).unwrap();
        let alpha = init_alpha_sparse(&data, 0.1, 0);
        // Half weight on the twin lowers the residual from 3 to 2.5.
        let x = data.data();
        let residual = |a: &[f64]| -> f64 {
            (0..3)
                .map(|i| {
                    let mut r = x.row(i).clone_owned();
                    for j in 0..3 {
                        if j != i {
                            r -= x.row(j) * a[j];
                        }
                    }
                    r.norm_squared()
                })
                .sum()
        };
        assert_relative_eq!(residual(&[0.0, 0.0, 0.0]), 3.0, epsilon = 1e-15);
        assert_relative_eq!(residual(&[0.0, 0.5, 0.0]), 2.5, epsilon = 1e-15);
        assert!(alpha.as_slice()[1] > 0.0);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
