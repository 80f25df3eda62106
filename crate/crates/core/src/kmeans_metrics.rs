//! K-means on embedding rows and the external agreement measures AC and NMI.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CdskError, Result};

const MAX_LLOYD_ITERATIONS: usize = 300;

/// Hard assignment of `n` items to clusters `1..=c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    c: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, c: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > c) {
            return Err(CdskError::Validation(format!(
                "label {} is outside 1..={}",
                bad, c
            )));
        }
        Ok(Self { labels, c })
    }

    /// Uses the largest label as the cluster count.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let c = labels.iter().copied().max().unwrap_or(0);
        Self::new(labels, c)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub partition: Partition,
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist_row(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, k: usize) -> f64 {
    points
        .row(i)
        .iter()
        .zip(centroids.row(k).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn plus_plus_seeds(points: &DMatrix<f64>, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = points.nrows();
    let mut centroids = DMatrix::zeros(c, points.ncols());
    let first = rng.gen_range(0..n);
    centroids.set_row(0, &points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist_row(points, i, &centroids, 0)).collect();
    for k in 1..c {
        let pick = match WeightedIndex::new(&nearest) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.gen_range(0..n),
        };
        centroids.set_row(k, &points.row(pick));
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(sq_dist_row(points, i, &centroids, k));
        }
    }
    centroids
}

fn assign(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &mut [usize]) -> (f64, bool) {
    let mut inertia = 0.0;
    let mut changed = false;
    for (i, label) in labels.iter_mut().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..centroids.nrows() {
            let d = sq_dist_row(points, i, centroids, k);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        if *label != best {
            *label = best;
            changed = true;
        }
        inertia += best_d;
    }
    (inertia, changed)
}

fn inertia_of(points: &DMatrix<f64>, centroids: &DMatrix<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &k)| sq_dist_row(points, i, centroids, k))
        .sum()
}

/// Recomputes centroids; an empty cluster takes the point farthest from its
/// current centroid.
fn update_centroids(points: &DMatrix<f64>, labels: &mut [usize], centroids: &mut DMatrix<f64>) {
    let c = centroids.nrows();
    let dim = points.ncols();
    let mut sums = DMatrix::zeros(c, dim);
    let mut counts = vec![0usize; c];
    for (i, &k) in labels.iter().enumerate() {
        counts[k] += 1;
        let mut row = sums.row_mut(k);
        row += points.row(i);
    }
    for k in 0..c {
        if counts[k] > 0 {
            centroids.set_row(k, &(sums.row(k) / counts[k] as f64));
        }
    }
    for k in 0..c {
        if counts[k] > 0 {
            continue;
        }
        let far = (0..points.nrows())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&i, &j| {
                sq_dist_row(points, i, centroids, labels[i])
                    .total_cmp(&sq_dist_row(points, j, centroids, labels[j]))
            });
        if let Some(i) = far {
            counts[labels[i]] -= 1;
            labels[i] = k;
            counts[k] = 1;
            centroids.set_row(k, &points.row(i));
        }
    }
}

fn lloyd(points: &DMatrix<f64>, c: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, DMatrix<f64>, Vec<f64>) {
    let n = points.nrows();
    let mut centroids = plus_plus_seeds(points, c, rng);
    let mut labels = vec![usize::MAX; n];
    assign(points, &centroids, &mut labels);
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        update_centroids(points, &mut labels, &mut centroids);
        history.push(inertia_of(points, &centroids, &labels));
        let (_, changed) = assign(points, &centroids, &mut labels);
        if !changed {
            break;
        }
    }
    update_centroids(points, &mut labels, &mut centroids);
    history.push(inertia_of(points, &centroids, &labels));
    (labels, centroids, history)
}

/// Lloyd's algorithm from k-means++ seeds, keeping the lowest-inertia restart
/// (earliest restart on ties). Restart `r` draws from stream `r` of a ChaCha
/// generator seeded with `seed`.
pub fn kmeans_fit(points: &DMatrix<f64>, c: usize, restarts: usize, seed: u64) -> Result<KMeansFit> {
    let n = points.nrows();
    if c == 0 || n < c {
        return Err(CdskError::Size(format!(
            "cannot form {} clusters from {} points",
            c, n
        )));
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let (labels, centroids, history) = lloyd(points, c, &mut rng);
        let inertia = *history.last().expect("at least one iteration");
        if best.as_ref().map_or(true, |b| inertia < b.inertia) {
            best = Some(KMeansFit {
                partition: Partition::new(labels.iter().map(|l| l + 1).collect(), c)?,
                centroids,
                inertia,
                inertia_history: history,
            });
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn kmeans(points: &DMatrix<f64>, c: usize, restarts: usize, seed: u64) -> Result<Partition> {
    Ok(kmeans_fit(points, c, restarts, seed)?.partition)
}

fn contingency(pred: &Partition, truth: &Partition) -> Result<Vec<Vec<u64>>> {
    if pred.len() != truth.len() {
        return Err(CdskError::Size(format!(
            "partitions have {} and {} items",
            pred.len(),
            truth.len()
        )));
    }
    let mut table = vec![vec![0u64; truth.c().max(1)]; pred.c().max(1)];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        table[p - 1][t - 1] += 1;
    }
    Ok(table)
}

/// Fraction of items matched under the best one-to-one relabeling of `pred`.
pub fn accuracy(pred: &Partition, truth: &Partition) -> Result<f64> {
    let table = contingency(pred, truth)?;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let k = table.len().max(table[0].len());
    let mut weights = Matrix::new(k, k, 0i64);
    for (p, row) in table.iter().enumerate() {
        for (t, &count) in row.iter().enumerate() {
            weights[(p, t)] = count as i64;
        }
    }
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / pred.len() as f64)
}

/// `I(pred; truth) / sqrt(H(pred) H(truth))` in nats; two single-cluster
/// partitions score 1.
pub fn nmi(pred: &Partition, truth: &Partition) -> Result<f64> {
    let table = contingency(pred, truth)?;
    let n = pred.len() as f64;
    if pred.is_empty() {
        return Ok(1.0);
    }
    let row_tot: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col_tot: Vec<f64> = (0..table[0].len())
        .map(|t| table.iter().map(|r| r[t]).sum::<u64>() as f64)
        .collect();
    let entropy = |tot: &[f64]| -> f64 {
        tot.iter()
            .filter(|&&m| m > 0.0)
            .map(|&m| {
                let p = m / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_pred = entropy(&row_tot);
    let h_truth = entropy(&col_tot);
    if h_pred <= 0.0 && h_truth <= 0.0 {
        return Ok(1.0);
    }
    if h_pred <= 0.0 || h_truth <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (p, row) in table.iter().enumerate() {
        for (t, &count) in row.iter().enumerate() {
            if count > 0 {
                let joint = count as f64 / n;
                mi += joint * (joint * n * n / (row_tot[p] * col_tot[t])).ln();
            }
        }
    }
    Ok((mi / (h_pred * h_truth).sqrt()).clamp(0.0, 1.0))
}
