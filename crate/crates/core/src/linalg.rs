//! Small dense linear-algebra helpers shared by the Laplace and calibration
//! code: symmetrization, the jitter ladder for almost-PD matrices, and
//! Cholesky-based log-determinants/inversions with decent error reporting.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Repair an (ideally) positive definite matrix by adding a scalar ridge.
///
/// Tries the matrix as given, then `eps * I` with `eps` walking the ladder
/// `1e-8 * base, 1e-7 * base, ..., 1e-2 * base`, where `base` is the mean
/// absolute diagonal (or 1 when the diagonal is identically zero). Returns the
/// repaired matrix and the ridge actually used; fails with the smallest
/// eigenvalue if even the largest ridge leaves the matrix indefinite.
pub fn jitter_to_pd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let a = symmetrize(a);
    if Cholesky::new(a.clone()).is_some() {
        return Ok((a, 0.0));
    }
    let n = a.nrows();
    let mean_diag = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n.max(1) as f64;
    let base = if mean_diag > 0.0 && mean_diag.is_finite() { mean_diag } else { 1.0 };
    let mut eps = 1e-8 * base;
    let cap = 1e-2 * base;
    while eps <= cap * (1.0 + 1e-12) {
        let mut repaired = a.clone();
        for i in 0..n {
            repaired[(i, i)] += eps;
        }
        if Cholesky::new(repaired.clone()).is_some() {
            return Ok((repaired, eps));
        }
        eps *= 10.0;
    }
    let min_eigenvalue = a
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Err(Error::IndefiniteHessian { min_eigenvalue })
}

/// Cholesky factorization that reports its context on failure.
pub fn cholesky(a: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(a)).ok_or_else(|| Error::SingularMatrix { context: context.to_string() })
}

/// Log-determinant of a PD matrix through its Cholesky factor.
pub fn log_det_pd(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of a PD matrix through Cholesky, symmetrized against roundoff.
pub fn invert_pd(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let chol = cholesky(a, context)?;
    Ok(symmetrize(&chol.inverse()))
}
