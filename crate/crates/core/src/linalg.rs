//! Small dense linear-algebra helpers shared by the emission model.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter added to the diagonal when a first Cholesky attempt fails.
pub const CHOLESKY_JITTER: f64 = 1e-8;

/// Cholesky factorization with a single retry after adding
/// `CHOLESKY_JITTER * trace / d` to the diagonal.
pub fn cholesky(matrix: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !matrix.is_square() {
        return Err(Error::Invalid(format!(
            "cholesky of non-square {}x{} matrix",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite("non-finite entries".into()));
    }
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok(chol);
    }
    let d = matrix.nrows().max(1) as f64;
    let jitter = CHOLESKY_JITTER * matrix.trace().abs() / d;
    if jitter > 0.0 {
        let mut bumped = matrix.clone();
        for i in 0..matrix.nrows() {
            bumped[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(bumped) {
            return Ok(chol);
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "{}x{} after jitter {jitter:e}",
        matrix.nrows(),
        matrix.ncols()
    )))
}

/// `log det` of the matrix factored by `chol`.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Replace `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Numerically stable `log Σ exp(xᵢ)`; returns `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub fn outer_add(acc: &mut DMatrix<f64>, v: &DVector<f64>) {
    acc.ger(1.0, v, v, 1.0);
}
