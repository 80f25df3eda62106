//! Spectral embedding under the degree constraint `Y^T D Y = I_c`.

use nalgebra::{DMatrix, DVector};

use crate::disc_similarity::DiscSimilarityGraph;
use crate::error::{CdskError, Result};
use crate::spectral_core::smallest_eigenpairs;

/// An `n x c` embedding; row `i` is the representation of sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    y: DMatrix<f64>,
}

impl Embedding {
    pub fn from_matrix(y: DMatrix<f64>) -> Self {
        Self { y }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.y
    }

    pub fn c(&self) -> usize {
        self.y.ncols()
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }
}

/// Embedding together with the normalized-Laplacian eigenvalues it came from.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    pub embedding: Embedding,
    /// The `c` smallest eigenvalues of `D^{-1/2} L D^{-1/2}`, ascending.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors `U`; the embedding is `D^{-1/2} U`.
    pub eigenvectors: DMatrix<f64>,
}

/// Minimizes `Tr(Y^T L Y)` subject to `Y^T D Y = I_c` via the smallest `c`
/// eigenvectors `U` of the normalized Laplacian, returning `Y = D^{-1/2} U`.
pub fn solve_embedding(graph: &DiscSimilarityGraph, c: usize) -> Result<SpectralEmbedding> {
    let n = graph.n();
    if c == 0 || c > n {
        return Err(CdskError::Size(format!(
            "cannot embed {} samples into {} dimensions",
            n, c
        )));
    }
    if let Some(i) = graph.degree.iter().position(|&d| !(d > 0.0)) {
        return Err(CdskError::Degenerate(format!(
            "sample {} has zero degree",
            i + 1
        )));
    }
    let (eigenvalues, eigenvectors) = smallest_eigenpairs(&graph.normalized_laplacian, c)?;
    let mut y = eigenvectors.clone();
    for (i, mut row) in y.row_iter_mut().enumerate() {
        row /= graph.degree[i].sqrt();
    }
    Ok(SpectralEmbedding {
        embedding: Embedding { y },
        eigenvalues,
        eigenvectors,
    })
}
