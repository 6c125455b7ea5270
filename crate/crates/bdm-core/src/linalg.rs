//! Small dense linear-algebra helpers shared by the filters.
//!
//! Covariances are kept symmetric by explicit symmetrization after every
//! update, and square roots are taken with a PSD-tolerant Cholesky that
//! falls back to diagonal jitter for marginally indefinite inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot tolerance for the PSD-tolerant factorization.
const PSD_PIVOT_TOL: f64 = 1e-12;

/// Jitter added to the diagonal on factorization failure, relative to the
/// mean diagonal magnitude.
const JITTER_SCALE: f64 = 1e-9;

/// Maximum number of jitter-and-retry attempts before giving up.
const MAX_JITTER_ATTEMPTS: usize = 3;

/// Returns the symmetric part `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower-triangular factor `L` with `L L^T = m` for symmetric PSD `m`.
///
/// Unlike a strict Cholesky this accepts positive *semi*-definite input:
/// a pivot within tolerance of zero zeroes out its column, so a zero
/// matrix factors to zero. Pivots significantly below zero fail.
fn psd_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let scale = m.diagonal().amax().max(1.0);
    let tol = PSD_PIVOT_TOL * scale;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -tol {
            return None;
        }
        if pivot <= tol {
            // Semi-definite direction: no spread along this column.
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Square root of a covariance with jitter fallback.
///
/// Tries the PSD-tolerant factorization; on failure adds
/// `JITTER_SCALE * trace / n` to the diagonal and retries up to
/// [`MAX_JITTER_ATTEMPTS`] times before reporting a degenerate covariance.
pub fn robust_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if let Some(l) = psd_cholesky(cov) {
        return Ok(l);
    }
    let base = JITTER_SCALE * cov.trace().abs().max(1e-300) / n as f64;
    let mut jittered = symmetrize(cov);
    for attempt in 1..=MAX_JITTER_ATTEMPTS {
        let bump = base * 10f64.powi(attempt as i32 - 1);
        for i in 0..n {
            jittered[(i, i)] += bump;
        }
        if let Some(l) = psd_cholesky(&jittered) {
            return Ok(l);
        }
    }
    Err(Error::DegenerateCovariance {
        attempts: MAX_JITTER_ATTEMPTS,
    })
}

/// Solves `m x = b` for symmetric positive-definite `m` via Cholesky.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or(Error::SingularMatrix { context })?;
    Ok(chol.solve(b))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))
        .ok_or(Error::SingularMatrix { context })?;
    Ok(chol.inverse())
}

/// Checks that `v` has length `expected`.
pub fn check_len(v: &DVector<f64>, expected: usize, what: &'static str) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual: v.len(),
        });
    }
    Ok(())
}
