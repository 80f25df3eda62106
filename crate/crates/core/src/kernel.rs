//! Isotropic Gaussian kernel `exp(-|x - t|^2 / (2 tau^2))` (unnormalized)
//! and gram matrix assembly.

use nalgebra::DMatrix;

use crate::data_io::SampleMatrix;
use crate::error::{CdskError, Result};

/// Bandwidth of the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(CdskError::Config(format!(
                "kernel bandwidth must be finite and > 0, got {}",
                bandwidth
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub(crate) fn from_sq_dist(&self, sq: f64) -> f64 {
        (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }
}

/// Symmetric kernel matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    bandwidth: f64,
}

impl GramMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Row sums `K 1`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.row_iter().map(|r| r.sum()).collect()
    }
}

pub fn eval_kernel(x: &[f64], t: &[f64], spec: &KernelSpec) -> Result<f64> {
    if x.len() != t.len() {
        return Err(CdskError::Shape(format!(
            "kernel arguments have dimensions {} and {}",
            x.len(),
            t.len()
        )));
    }
    Ok(spec.from_sq_dist(sq_dist(x, t)))
}

pub(crate) fn sq_dist(x: &[f64], t: &[f64]) -> f64 {
    x.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn row_sq_dist(data: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    data.row(i)
        .iter()
        .zip(data.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Gram matrix over the rows of `data`.
pub fn gram(data: &SampleMatrix, spec: &KernelSpec) -> GramMatrix {
    GramMatrix {
        values: gram_of_rows(data.data(), spec),
        bandwidth: spec.bandwidth(),
    }
}

pub(crate) fn gram_of_rows(data: &DMatrix<f64>, spec: &KernelSpec) -> DMatrix<f64> {
    let n = data.nrows();
    let mut k = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = spec.from_sq_dist(row_sq_dist(data, i, j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Population variance of the pairwise Euclidean distances `{|x_i - x_j| : i < j}`.
pub fn default_bandwidth(data: &SampleMatrix) -> Result<f64> {
    let x = data.data();
    let n = x.nrows();
    let mut count = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = row_sq_dist(x, i, j).sqrt();
            count += 1;
            let delta = dist - mean;
            mean += delta / count as f64;
            m2 += delta * (dist - mean);
        }
    }
    let variance = m2 / count as f64;
    let scale = mean.abs().max(f64::MIN_POSITIVE);
    if !(variance > 1e-24 * scale * scale) {
        return Err(CdskError::Degenerate(
            "pairwise distances have zero variance; pass an explicit bandwidth".into(),
        ));
    }
    Ok(variance)
}
