use nalgebra::{DMatrix, DVector, Dim, Matrix, Storage, U1};

use super::EmissionParams;
use crate::error::{Error, Result};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Pre-factored Gaussian density for repeated evaluation.
#[derive(Debug, Clone)]
pub struct GaussianEval {
    mu: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianEval {
    pub fn new(params: &EmissionParams) -> Result<Self> {
        let chol = linalg::cholesky(params.sigma())?;
        let d = params.dim() as f64;
        let log_norm = -0.5 * (d * LN_2PI + linalg::log_det(&chol));
        Ok(Self {
            mu: params.mu().clone(),
            chol_l: chol.unpack(),
            log_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `log N(o; μ, Σ)`. The caller guarantees `o.len() == self.dim()`.
    pub fn logpdf<R: Dim, S: Storage<f64, R, U1>>(&self, o: &Matrix<f64, R, U1, S>) -> f64 {
        let mut z: DVector<f64> = DVector::from_iterator(
            self.mu.len(),
            o.iter().zip(self.mu.iter()).map(|(x, m)| x - m),
        );
        self.chol_l.solve_lower_triangular_unchecked_mut(&mut z);
        self.log_norm - 0.5 * z.norm_squared()
    }
}

/// `log N(o; μ, Σ)` evaluated through the Cholesky factor of `Σ`.
pub fn gaussian_logpdf<R: Dim, S: Storage<f64, R, U1>>(
    o: &Matrix<f64, R, U1, S>,
    params: &EmissionParams,
) -> Result<f64> {
    if o.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: o.len(),
        });
    }
    let v = GaussianEval::new(params)?.logpdf(o);
    if !v.is_finite() {
        return Err(Error::NotPositiveDefinite(
            "density evaluation was not finite".into(),
        ));
    }
    Ok(v)
}
