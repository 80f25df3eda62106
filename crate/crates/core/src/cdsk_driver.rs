//! Coordinate descent between the spectral embedding and the kernel weights,
//! plus lambda selection by embedding entropy.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::{ClusteringResult, Metrics, SampleMatrix};
use crate::disc_similarity::{descent_objective, disc_similarity, DiscSimilarityGraph, SimplexWeights, MAX_LAMBDA};
use crate::embedding::{solve_embedding, Embedding};
use crate::error::{CdskError, Result};
use crate::kernel::{default_bandwidth, gram, GramMatrix, KernelSpec};
use crate::kmeans_metrics::{accuracy, kmeans, nmi, Partition};
use crate::simplex_qp::{
    assemble_alpha_qp, default_max_passes, init_alpha_sparse, solve_smo, DEFAULT_QP_TOL, DEFAULT_SPARSITY_TAU,
};

/// `0.05, 0.10, ..., 0.50`.
pub const DEFAULT_LAMBDA_GRID: [f64; 10] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50];

/// Maximum number of step halvings tried when a weight update raises the objective.
const MAX_BACKTRACKS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaInit {
    /// Greedy sparse self-representation with the given stopping threshold.
    Sparse { tau: f64 },
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdskConfig {
    pub c: usize,
    pub lambda: f64,
    /// Gaussian bandwidth; `None` uses the pairwise-distance variance heuristic.
    pub bandwidth: Option<f64>,
    pub max_iter: usize,
    pub qp_tol: f64,
    /// Stop once the relative objective change falls below this.
    pub convergence_tol: f64,
    pub seed: u64,
    pub restarts_kmeans: usize,
    pub alpha_init: AlphaInit,
    /// When false the weights stay at their initial value.
    pub learn_alpha: bool,
}

impl CdskConfig {
    pub fn new(c: usize) -> Self {
        Self {
            c,
            lambda: 0.1,
            bandwidth: None,
            max_iter: 20,
            qp_tol: DEFAULT_QP_TOL,
            convergence_tol: 1e-8,
            seed: 0,
            restarts_kmeans: 10,
            alpha_init: AlphaInit::Sparse {
                tau: DEFAULT_SPARSITY_TAU,
            },
            learn_alpha: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0 && self.lambda <= MAX_LAMBDA) {
            return Err(CdskError::Config(format!(
                "lambda must satisfy 0 < lambda <= 2, got {}",
                self.lambda
            )));
        }
        if let Some(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return Err(CdskError::Config(format!("bandwidth must be > 0, got {}", h)));
            }
        }
        if self.max_iter == 0 {
            return Err(CdskError::Config("max_iter must be at least 1".into()));
        }
        if !(self.qp_tol > 0.0) {
            return Err(CdskError::Config(format!("qp_tol must be > 0, got {}", self.qp_tol)));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(CdskError::Config("convergence_tol must be >= 0".into()));
        }
        if self.c == 0 {
            return Err(CdskError::Config("cluster count must be at least 1".into()));
        }
        Ok(())
    }
}

/// A clustering result together with the final embedding.
#[derive(Debug, Clone)]
pub struct CdskRun {
    pub result: ClusteringResult,
    pub embedding: Embedding,
    /// Number of weight updates that were shortened or rejected to keep the
    /// objective from rising.
    pub backtracks: usize,
}

struct Iterate {
    alpha: SimplexWeights,
    embedding: Embedding,
    objective: f64,
}

fn evaluate(k: &GramMatrix, alpha: SimplexWeights, lambda: f64, c: usize) -> Result<Iterate> {
    let graph = disc_similarity(k, &alpha, lambda)?;
    let embedding = solve_embedding(&graph, c)?.embedding;
    let objective = descent_objective(&embedding, &graph, k, &alpha)?;
    Ok(Iterate {
        alpha,
        embedding,
        objective,
    })
}

fn metrics_for(data: &SampleMatrix, labels: &[usize], c: usize) -> Result<Metrics> {
    let Some(truth) = data.labels() else {
        return Ok(Metrics::default());
    };
    let pred = Partition::new(labels.to_vec(), c)?;
    let truth = Partition::from_labels(truth.to_vec())?;
    Ok(Metrics {
        accuracy: Some(accuracy(&pred, &truth)?),
        nmi: Some(nmi(&pred, &truth)?),
    })
}

fn resolve_bandwidth(data: &SampleMatrix, config: &CdskConfig) -> Result<f64> {
    match config.bandwidth {
        Some(h) => Ok(h),
        None => default_bandwidth(data),
    }
}

fn initial_alpha(data: &SampleMatrix, config: &CdskConfig) -> SimplexWeights {
    match config.alpha_init {
        AlphaInit::Uniform => SimplexWeights::uniform(data.n()),
        AlphaInit::Sparse { tau } => init_alpha_sparse(data, tau, config.seed),
    }
}

/// Runs the alternation and returns the final embedding alongside the result.
pub fn run_cdsk_detailed(data: &SampleMatrix, config: &CdskConfig) -> Result<CdskRun> {
    config.validate()?;
    let alpha0 = initial_alpha(data, config);
    run_from(data, config, alpha0)
}

/// Clusters `data` into `config.c` groups.
pub fn run_cdsk(data: &SampleMatrix, config: &CdskConfig) -> Result<ClusteringResult> {
    Ok(run_cdsk_detailed(data, config)?.result)
}

/// The objective trace holds one value per iteration: the full-trace
/// objective at the accepted weights, evaluated with the embedding those
/// weights induce. A weight update that would raise it is shortened by step
/// halving toward the previous weights, and rejected when no shortened step
/// helps, which ends the descent.
fn run_from(data: &SampleMatrix, config: &CdskConfig, alpha0: SimplexWeights) -> Result<CdskRun> {
    config.validate()?;
    let n = data.n();
    let c = config.c;
    if c < 1 || n < c {
        return Err(CdskError::Size(format!("cannot form {} clusters from {} samples", c, n)));
    }
    if alpha0.len() != n {
        return Err(CdskError::Shape(format!("{} initial weights for {} samples", alpha0.len(), n)));
    }
    let bandwidth = resolve_bandwidth(data, config)?;
    let k = gram(data, &KernelSpec::new(bandwidth)?);
    let lambda = config.lambda;

    // A sparse start can leave samples far from its support with no degree;
    // uniform weights always give every sample its own kernel mass.
    let mut current = match evaluate(&k, alpha0, lambda, c) {
        Err(CdskError::Degenerate(_)) => evaluate(&k, SimplexWeights::uniform(n), lambda, c)?,
        other => other?,
    };
    let mut trace = Vec::with_capacity(config.max_iter);
    let mut qp_converged = true;
    let mut backtracks = 0;

    if !config.learn_alpha {
        trace.push(current.objective);
    } else {
        for _ in 0..config.max_iter {
            let qp = assemble_alpha_qp(&current.embedding, &k, lambda)?;
            let sol = solve_smo(&qp, &current.alpha, config.qp_tol, default_max_passes(n))?;
            qp_converged &= sol.converged;

            let previous = current.objective;
            let slack = 1e-12 * previous.abs().max(1.0);
            let old = current.alpha.as_slice().to_vec();
            let proposal = sol.alpha.as_slice().to_vec();
            let mut accepted = None;
            let mut step = 1.0;
            for attempt in 0..=MAX_BACKTRACKS {
                let blend: Vec<f64> = old.iter().zip(&proposal).map(|(a, b)| a + step * (b - a)).collect();
                let sum: f64 = blend.iter().sum();
                let candidate = SimplexWeights::from_raw(blend.iter().map(|v| v.max(0.0) / sum).collect());
                match evaluate(&k, candidate, lambda, c) {
                    Ok(next) if next.objective <= previous + slack => {
                        if attempt > 0 {
                            backtracks += 1;
                        }
                        accepted = Some(next);
                        break;
                    }
                    Ok(_) | Err(CdskError::Degenerate(_)) => step *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            let Some(next) = accepted else {
                backtracks += 1;
                trace.push(previous);
                break;
            };
            let change = (previous - next.objective).abs() / previous.abs().max(f64::MIN_POSITIVE);
            // Guard against float noise producing a tiny increase.
            let value = next.objective.min(previous);
            current = next;
            trace.push(value);
            if change < config.convergence_tol {
                break;
            }
        }
    }

    let partition = kmeans(current.embedding.matrix(), c, config.restarts_kmeans, config.seed)?;
    let labels = partition.into_labels();
    let metrics = metrics_for(data, &labels, c)?;
    Ok(CdskRun {
        result: ClusteringResult {
            labels,
            alpha: current.alpha,
            objective_trace: trace,
            metrics,
            lambda_used: lambda,
            bandwidth_used: bandwidth,
            seed: config.seed,
            qp_converged,
        },
        embedding: current.embedding,
        backtracks,
    })
}

/// Row-wise softmax entropy (natural log) averaged over the rows of `y`.
pub fn mean_softmax_entropy(y: &DMatrix<f64>) -> f64 {
    if y.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = y
        .row_iter()
        .map(|row| {
            let top = row.max();
            let w: Vec<f64> = row.iter().map(|v| (v - top).exp()).collect();
            let z: f64 = w.iter().sum();
            -w.iter()
                .map(|v| v / z)
                .filter(|&p| p > 0.0)
                .map(|p| p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / y.nrows() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean embedding entropy per grid value.
    pub entropies: Vec<f64>,
    /// Rows of the input used for validation.
    pub validation_rows: Vec<usize>,
}

fn derived_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Picks the grid value whose embedding on a random validation subset has the
/// lowest mean softmax entropy (ties toward the smaller value). The subset is
/// 10% of the data but never fewer than `max(2c, 10)` rows; one weight
/// initialization is shared across the grid.
pub fn tune_lambda(data: &SampleMatrix, config: &CdskConfig, grid: &[f64]) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(CdskError::Config("lambda grid is empty".into()));
    }
    for &l in grid {
        CdskConfig { lambda: l, ..config.clone() }.validate()?;
    }
    let n = data.n();
    let floor = (2 * config.c).max(10);
    if n < floor {
        return Err(CdskError::Size(format!(
            "lambda tuning needs at least {} samples for validation, got {}",
            floor, n
        )));
    }
    let size = ((n as f64 * 0.1).ceil() as usize).max(floor);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    rows.truncate(size);
    rows.sort_unstable();
    let subset = data.select_rows(&rows)?.without_labels();

    let bandwidth = resolve_bandwidth(data, config)?;
    let alpha0 = initial_alpha(&subset, config);
    let mut entropies = Vec::with_capacity(grid.len());
    for (i, &l) in grid.iter().enumerate() {
        let cfg = CdskConfig {
            lambda: l,
            bandwidth: Some(bandwidth),
            seed: derived_seed(config.seed, i),
            ..config.clone()
        };
        let run = run_from(&subset, &cfg, alpha0.clone())?;
        entropies.push(mean_softmax_entropy(run.embedding.matrix()));
    }
    let mut best = 0;
    for (i, &e) in entropies.iter().enumerate() {
        if e < entropies[best] {
            best = i;
        }
    }
    Ok(LambdaSelection {
        lambda: grid[best],
        grid: grid.to_vec(),
        entropies,
        validation_rows: rows,
    })
}

/// Plain normalized spectral clustering on the Gaussian gram matrix.
pub fn run_baseline_spectral(data: &SampleMatrix, c: usize, bandwidth: Option<f64>, seed: u64) -> Result<ClusteringResult> {
    let n = data.n();
    if c == 0 || n < c {
        return Err(CdskError::Size(format!("cannot form {} clusters from {} samples", c, n)));
    }
    let h = match bandwidth {
        Some(h) => h,
        None => default_bandwidth(data)?,
    };
    let k = gram(data, &KernelSpec::new(h)?);
    let labels = if c == 1 {
        vec![1; n]
    } else {
        let graph = DiscSimilarityGraph::from_similarity(k.values().clone(), 0.0)?;
        let y = solve_embedding(&graph, c)?.embedding;
        kmeans(y.matrix(), c, 10, seed)?.into_labels()
    };
    let metrics = metrics_for(data, &labels, c)?;
    Ok(ClusteringResult {
        labels,
        alpha: SimplexWeights::uniform(n),
        objective_trace: Vec::new(),
        metrics,
        lambda_used: 0.0,
        bandwidth_used: h,
        seed,
        qp_converged: true,
    })
}

/// Spectral embedding of the raw gram matrix.
pub fn baseline_embedding(data: &SampleMatrix, c: usize, bandwidth: f64) -> Result<Embedding> {
    let k = gram(data, &KernelSpec::new(bandwidth)?);
    let graph = DiscSimilarityGraph::from_similarity(k.values().clone(), 0.0)?;
    Ok(solve_embedding(&graph, c)?.embedding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{make_blobs, make_two_moons};
    use crate::spectral_core::max_principal_angle;
    use approx::assert_relative_eq;

    // Unit-scale centers keep the heuristic bandwidth well below the center
    // distance, so the gram matrix is block dominant.
    fn blobs(seed: u64) -> SampleMatrix {
        make_blobs(30, &[vec![0.0, 0.0], vec![1.0, 0.0]], 0.05, seed).unwrap()
    }

    #[test]
    fn softmax_entropy_cases() {
        let y = DMatrix::from_fn(5, 2, |_, j| if j == 0 { 10.0 } else { 0.0 });
        assert!(mean_softmax_entropy(&y) < 0.01);
        let z = DMatrix::zeros(4, 2);
        assert_relative_eq!(mean_softmax_entropy(&z), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let data = blobs(1);
        let res = run_cdsk(&data, &CdskConfig::new(2)).unwrap();
        assert_eq!(res.metrics.accuracy, Some(1.0));
        assert!(res.objective_trace.len() <= 20 && !res.objective_trace.is_empty());
        let s: f64 = res.alpha.iter().sum();
        assert!((s - 1.0).abs() < 1e-9 && res.alpha.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn trace_is_monotone() {
        for seed in 0..3 {
            let data = make_two_moons(80, 0.08, seed).unwrap();
            let cfg = CdskConfig {
                seed,
                ..CdskConfig::new(2)
            };
            let res = run_cdsk(&data, &cfg).unwrap();
            for w in res.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1e-300));
            }
        }
    }

    #[test]
    fn uniform_pinned_matches_baseline() {
        let data = make_two_moons(60, 0.05, 2).unwrap();
        let h = default_bandwidth(&data).unwrap();
        let cfg = CdskConfig {
            alpha_init: AlphaInit::Uniform,
            learn_alpha: false,
            max_iter: 1,
            lambda: 1.3,
            bandwidth: Some(h),
            ..CdskConfig::new(2)
        };
        let run = run_cdsk_detailed(&data, &cfg).unwrap();
        let base = baseline_embedding(&data, 2, h).unwrap();
        assert!(max_principal_angle(run.embedding.matrix(), base.matrix()).unwrap() < 1e-6);
        let sc = run_baseline_spectral(&data, 2, Some(h), 0).unwrap();
        assert_eq!(run.result.labels, sc.labels);
    }

    #[test]
    fn degenerate_start_falls_back_to_uniform() {
        let data = make_blobs(5, &[vec![0.0], vec![50.0]], 0.1, 4).unwrap();
        let cfg = CdskConfig {
            bandwidth: Some(0.5),
            ..CdskConfig::new(2)
        };
        let run = run_from(&data, &cfg, SimplexWeights::vertex(10, 0)).unwrap();
        assert_eq!(run.result.metrics.accuracy, Some(1.0));
    }

    #[test]
    fn each_point_its_own_cluster() {
        let data = SampleMatrix::from_rows(&[vec![0.0, 0.0], vec![5.0, 1.0], vec![-3.0, 4.0]], None).unwrap();
        let res = run_cdsk(&data, &CdskConfig::new(3)).unwrap();
        let mut labels = res.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![1, 2, 3]);
        assert!(res.objective_trace.len() <= 20);
    }

    #[test]
    fn config_errors() {
        let data = blobs(2);
        let bad = CdskConfig {
            lambda: 3.0,
            ..CdskConfig::new(2)
        };
        assert!(matches!(run_cdsk(&data, &bad), Err(CdskError::Config(_))));
        assert!(matches!(run_cdsk(&data, &CdskConfig::new(100)), Err(CdskError::Size(_))));
    }

    #[test]
    fn deterministic() {
        let data = blobs(3);
        let cfg = CdskConfig::new(2);
        assert_eq!(run_cdsk(&data, &cfg).unwrap(), run_cdsk(&data, &cfg).unwrap());
    }

    #[test]
    fn tuning_cases() {
        let data = blobs(4);
        let cfg = CdskConfig::new(2);
        let single = tune_lambda(&data, &cfg, &[0.1]).unwrap();
        assert_eq!(single.lambda, 0.1);
        assert_eq!(single.validation_rows.len(), 10);
        let full = tune_lambda(&data, &cfg, &DEFAULT_LAMBDA_GRID).unwrap();
        assert!(DEFAULT_LAMBDA_GRID.contains(&full.lambda));
        assert_eq!(full.entropies.len(), 10);
        let best = full.entropies.iter().cloned().fold(f64::INFINITY, f64::min);
        let first = full.entropies.iter().position(|&e| e == best).unwrap();
        assert_eq!(full.lambda, DEFAULT_LAMBDA_GRID[first]);

        let tiny = SampleMatrix::from_rows(&(0..5).map(|i| vec![i as f64, 0.0]).collect::<Vec<_>>(), None).unwrap();
        assert!(matches!(tune_lambda(&tiny, &cfg, &[0.1]), Err(CdskError::Size(_))));
    }

    #[test]
    fn baseline_cases() {
        let data = blobs(5);
        assert_eq!(run_baseline_spectral(&data, 2, None, 0).unwrap().metrics.accuracy, Some(1.0));
        let one = run_baseline_spectral(&data, 1, None, 0).unwrap();
        assert!(one.labels.iter().all(|&l| l == 1));
    }
}
