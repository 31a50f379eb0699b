use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{EmissionParams, HyperParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::observations::Observations;

/// Conjugate IW update for zero-mean residuals: `(n0 + N, S0 + Σ r rᵀ)`.
pub fn iw_posterior(
    n0: f64,
    s0: &DMatrix<f64>,
    residuals: &[DVector<f64>],
) -> Result<(f64, DMatrix<f64>)> {
    let d = s0.nrows();
    let mut s = s0.clone();
    for r in residuals {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: r.len(),
            });
        }
        linalg::outer_add(&mut s, r);
    }
    linalg::symmetrize(&mut s);
    Ok((n0 + residuals.len() as f64, s))
}

/// Draw `Σ ~ IW(n, S)` with the Bartlett decomposition of the matching Wishart.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    n: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if !scale.is_square() || d == 0 {
        return Err(Error::Invalid(
            "IW scale must be a non-empty square matrix".into(),
        ));
    }
    if !(n > d as f64 - 1.0) || !n.is_finite() {
        return Err(Error::Domain(format!(
            "IW degrees of freedom {n} must exceed d - 1 = {}",
            d - 1
        )));
    }
    let c = linalg::cholesky(scale)?.unpack();
    // Bartlett factor A of a W(n, I) draw: A Aᵀ ~ W(n, I).
    let mut a = DMatrix::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new(n - i as f64).map_err(|e| Error::Domain(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    // Σ = C (A Aᵀ)⁻¹ Cᵀ = Yᵀ Y with Y = A⁻¹ Cᵀ.
    let y = a
        .solve_lower_triangular(&c.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("singular Bartlett factor".into()))?;
    let mut sigma = y.transpose() * y;
    linalg::symmetrize(&mut sigma);
    linalg::cholesky(&sigma)?;
    Ok(sigma)
}

/// Make a covariance estimate strictly positive definite. Rank-deficient
/// input gets `1e-6 · trace / d` added to the diagonal (`1e-6` if the trace is 0).
pub fn regularize_covariance(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if max > 0.0 && min > 1e-12 * max {
        return cov.clone();
    }
    let trace = cov.trace();
    let jitter = if trace > 0.0 {
        1e-6 * trace / d as f64
    } else {
        1e-6
    };
    let mut out = cov.clone();
    for i in 0..d {
        out[(i, i)] += jitter;
    }
    out
}

/// Prior on per-state emission parameters, tied to one observation sequence.
///
/// With `fix_mean_zero` the prior is `Σ ~ IW(n0, S0)` and `μ = 0`. Otherwise a
/// Normal-Inverse-Wishart prior centred on the data mean is used:
/// `μ | Σ ~ N(μ0, Σ / κ0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionPrior {
    pub n0: f64,
    pub s0: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub kappa0: f64,
    pub fix_mean_zero: bool,
}

impl EmissionPrior {
    /// `S0 = s0_scale · Σ̄` where `Σ̄` is the regularized empirical covariance.
    pub fn from_observations(hyper: &HyperParams, obs: &Observations) -> Result<Self> {
        let d = obs.dim();
        hyper.validate(d)?;
        let cov = regularize_covariance(&obs.sample_covariance()?);
        let mu0 = if hyper.fix_mean_zero {
            DVector::zeros(d)
        } else {
            obs.matrix().column_mean()
        };
        Ok(Self {
            n0: hyper.n0_for(d),
            s0: cov * hyper.s0_scale,
            mu0,
            kappa0: hyper.mean_prior_strength,
            fix_mean_zero: hyper.fix_mean_zero,
        })
    }

    pub fn dim(&self) -> usize {
        self.s0.nrows()
    }

    pub fn prior_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EmissionParams> {
        self.draw(self.n0, &self.s0, &self.mu0, self.kappa0, rng)
    }

    /// Posterior `(n, S, μ_N, κ_N)` given the frames assigned to one state.
    pub fn posterior(
        &self,
        obs: &Observations,
        frames: &[usize],
    ) -> Result<(f64, DMatrix<f64>, DVector<f64>, f64)> {
        let d = self.dim();
        if obs.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: obs.dim(),
            });
        }
        let n = frames.len() as f64;
        if self.fix_mean_zero {
            let mut s = self.s0.clone();
            for &t in frames {
                let r = obs.frame(t).into_owned();
                linalg::outer_add(&mut s, &r);
            }
            linalg::symmetrize(&mut s);
            return Ok((self.n0 + n, s, DVector::zeros(d), self.kappa0));
        }
        if frames.is_empty() {
            return Ok((self.n0, self.s0.clone(), self.mu0.clone(), self.kappa0));
        }
        let mut mean = DVector::zeros(d);
        for &t in frames {
            mean += obs.frame(t);
        }
        mean /= n;
        let mut s = self.s0.clone();
        for &t in frames {
            let r = obs.frame(t) - &mean;
            linalg::outer_add(&mut s, &r);
        }
        let kappa_n = self.kappa0 + n;
        let shift = &mean - &self.mu0;
        s.ger(self.kappa0 * n / kappa_n, &shift, &shift, 1.0);
        linalg::symmetrize(&mut s);
        let mu_n = (&self.mu0 * self.kappa0 + mean * n) / kappa_n;
        Ok((self.n0 + n, s, mu_n, kappa_n))
    }

    pub fn posterior_draw<R: Rng + ?Sized>(
        &self,
        obs: &Observations,
        frames: &[usize],
        rng: &mut R,
    ) -> Result<EmissionParams> {
        let (n, s, mu, kappa) = self.posterior(obs, frames)?;
        self.draw(n, &s, &mu, kappa, rng)
    }

    fn draw<R: Rng + ?Sized>(
        &self,
        n: f64,
        s: &DMatrix<f64>,
        mu: &DVector<f64>,
        kappa: f64,
        rng: &mut R,
    ) -> Result<EmissionParams> {
        let sigma = sample_inverse_wishart(n, s, rng)?;
        if self.fix_mean_zero {
            return EmissionParams::zero_mean(sigma);
        }
        let l = linalg::cholesky(&(&sigma / kappa))?.unpack();
        let z = DVector::from_fn(mu.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        EmissionParams::new(mu + l * z, sigma)
    }
}
