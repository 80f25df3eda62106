//! Dense symmetric eigensolver, truncated eigenpairs, and the eigenvalue-sign
//! split of a symmetric similarity into two PSD parts.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{CdskError, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-8;

/// Full spectral decomposition with ascending eigenvalues; column `k` of
/// `eigenvectors` belongs to `eigenvalues[k]`.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// `S = s_plus - s_minus` with both parts PSD.
#[derive(Debug, Clone)]
pub struct PsdSplit {
    pub s_plus: DMatrix<f64>,
    pub s_minus: DMatrix<f64>,
}

pub(crate) fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(CdskError::Shape(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CdskError::Validation("matrix has non-finite entries".into()));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(CdskError::Validation(format!(
            "matrix is not symmetric (max |A - A^T| = {:.3e})",
            asym
        )));
    }
    Ok(())
}

fn decompose(a: &DMatrix<f64>, verify: bool) -> Result<EigenSystem> {
    check_symmetric(a)?;
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    // nalgebra's SymmetricEigen loses up to ~1e-8 relative accuracy on some
    // dense inputs; faer's divide-and-conquer solver stays near machine precision.
    let evd = Mat::<f64>::from_fn(n, n, |i, j| sym[(i, j)])
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| CdskError::Numeric(format!("symmetric eigensolver failed: {:?}", e)))?;
    let values = evd.S().column_vector();
    let vectors = evd.U();
    let eig = EigenSystem {
        eigenvalues: DVector::from_fn(n, |k, _| values[k]),
        eigenvectors: DMatrix::from_fn(n, n, |i, k| vectors[(i, k)]),
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-10) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
        eigenvectors.set_column(dst, &col);
    }

    if verify {
        let frob = a.norm().max(f64::MIN_POSITIVE);
        let av = a * &eigenvectors;
        let worst = (0..n)
            .map(|k| (av.column(k) - eigenvectors.column(k) * eigenvalues[k]).norm())
            .fold(0.0, f64::max);
        if worst > RESIDUAL_TOL * frob {
            return Err(CdskError::Numeric(format!(
                "eigen residual {:.3e} exceeds {:.1e} * |A|_F",
                worst, RESIDUAL_TOL
            )));
        }
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenvectors,
    })
}

/// Full decomposition of a symmetric matrix, with a residual check on every pair.
pub fn eigh(a: &DMatrix<f64>) -> Result<EigenSystem> {
    decompose(a, true)
}

/// The `c` algebraically smallest eigenpairs, ascending.
pub fn smallest_eigenpairs(a: &DMatrix<f64>, c: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if c == 0 || c > a.nrows() {
        return Err(CdskError::Size(format!(
            "requested {} eigenpairs of a {}x{} matrix",
            c,
            a.nrows(),
            a.ncols()
        )));
    }
    let sys = decompose(a, false)?;
    Ok((
        sys.eigenvalues.rows(0, c).clone_owned(),
        sys.eigenvectors.columns(0, c).clone_owned(),
    ))
}

/// Splits a symmetric matrix by eigenvalue sign. Eigenvalues within
/// `1e-10 * |S|_2` of zero go to the positive part.
pub fn psd_split(s: &DMatrix<f64>) -> Result<PsdSplit> {
    let sys = decompose(s, false)?;
    let n = s.nrows();
    let spectral_norm = sys.eigenvalues.amax();
    let cutoff = 1e-10 * spectral_norm;
    let mut s_plus = DMatrix::zeros(n, n);
    let mut s_minus = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = sys.eigenvalues[k];
        let v = sys.eigenvectors.column(k);
        let outer = &v * v.transpose();
        if lam >= -cutoff {
            if lam > 0.0 {
                s_plus += outer * lam;
            }
        } else {
            s_minus += outer * (-lam);
        }
    }
    symmetrize(&mut s_plus);
    symmetrize(&mut s_minus);
    Ok(PsdSplit { s_plus, s_minus })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Largest principal angle (radians) between the column spans of `a` and `b`,
/// which must have the same shape and full column rank.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CdskError::Shape(format!(
            "subspace bases {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let residual = &qb - &qa * (qa.transpose() * &qb);
    let sin_max = residual
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
        .min(1.0);
    Ok(sin_max.asin())
}
