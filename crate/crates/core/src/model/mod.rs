//! Mathematical layer of the sticky HDP-HMM: parameter types, stick-breaking
//! weights, the sticky Dirichlet prior, Gaussian emission likelihoods and the
//! Inverse-Wishart conjugate update.

mod gaussian;
mod stick;
mod wishart;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use gaussian::{gaussian_logpdf, GaussianEval};
pub use stick::{
    log_gamma_sample, sample_dirichlet, sample_gem, stick_breaking, sticky_prior_vector,
};
pub use wishart::{iw_posterior, regularize_covariance, sample_inverse_wishart, EmissionPrior};

use crate::error::{Error, Result};
use crate::linalg;

/// Fixed prior parameters of the model together with the weak-limit truncation.
///
/// Defaults are the Gamma priors `(1,1)`, `(1,1)`, `(100,1)` for `α`, `γ`, `κ`,
/// an IW scale of `0.75 ×` the empirical covariance, `n0 = d + 2` and `L = 30`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub a_kappa: f64,
    pub b_kappa: f64,
    /// IW degrees of freedom. `None` resolves to `d + 2`.
    pub n0: Option<f64>,
    pub s0_scale: f64,
    #[serde(rename = "truncation_L")]
    pub truncation: usize,
    pub fix_mean_zero: bool,
    /// Pseudo-count on the emission mean prior; only used when means are sampled.
    pub mean_prior_strength: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            a_alpha: 1.0,
            b_alpha: 1.0,
            a_gamma: 1.0,
            b_gamma: 1.0,
            a_kappa: 100.0,
            b_kappa: 1.0,
            n0: None,
            s0_scale: 0.75,
            truncation: 30,
            fix_mean_zero: true,
            mean_prior_strength: 0.01,
        }
    }
}

impl HyperParams {
    pub fn n0_for(&self, d: usize) -> f64 {
        self.n0.unwrap_or(d as f64 + 2.0)
    }

    /// Check every invariant against observation dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        let positives = [
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
            ("a_kappa", self.a_kappa),
            ("b_kappa", self.b_kappa),
            ("s0_scale", self.s0_scale),
            ("mean_prior_strength", self.mean_prior_strength),
        ];
        for (name, v) in positives {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        let n0 = self.n0_for(d);
        if !(n0.is_finite() && n0 > 0.0) {
            return Err(Error::Domain(format!("n0 must be positive, got {n0}")));
        }
        if n0 <= d as f64 - 1.0 {
            return Err(Error::Domain(format!(
                "n0 = {n0} must exceed d - 1 = {}",
                d as f64 - 1.0
            )));
        }
        if self.truncation < 2 {
            return Err(Error::Domain(format!(
                "truncation_L must be at least 2, got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// Current draws of the DP concentrations and the sticky self-transition mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationState {
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
}

impl ConcentrationState {
    pub fn new(alpha: f64, gamma: f64, kappa: f64) -> Result<Self> {
        if !(alpha > 0.0 && gamma > 0.0 && kappa >= 0.0) || !(alpha + gamma + kappa).is_finite() {
            return Err(Error::Domain(format!(
                "invalid concentrations alpha={alpha} gamma={gamma} kappa={kappa}"
            )));
        }
        Ok(Self {
            alpha,
            gamma,
            kappa,
        })
    }

    /// Gamma prior means `a / b`.
    pub fn prior_mean(hyper: &HyperParams) -> Self {
        Self {
            alpha: hyper.a_alpha / hyper.b_alpha,
            gamma: hyper.a_gamma / hyper.b_gamma,
            kappa: hyper.a_kappa / hyper.b_kappa,
        }
    }
}

/// Gaussian emission parameters `θ = (μ, Σ)` of one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmissionParamsRepr", into = "EmissionParamsRepr")]
pub struct EmissionParams {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl EmissionParams {
    pub const SYMMETRY_TOL: f64 = 1e-10;

    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: sigma.nrows(),
            });
        }
        if linalg::max_asymmetry(&sigma) > Self::SYMMETRY_TOL {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        linalg::cholesky(&sigma)?;
        Ok(Self { mu, sigma })
    }

    pub fn zero_mean(sigma: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::zeros(sigma.nrows()), sigma)
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Serialize, Deserialize)]
struct EmissionParamsRepr {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
}

impl From<EmissionParams> for EmissionParamsRepr {
    fn from(p: EmissionParams) -> Self {
        Self {
            mu: p.mu.iter().copied().collect(),
            sigma: matrix_rows(&p.sigma),
        }
    }
}

impl TryFrom<EmissionParamsRepr> for EmissionParams {
    type Error = Error;

    fn try_from(r: EmissionParamsRepr) -> Result<Self> {
        let sigma = matrix_from_rows(&r.sigma)?;
        Self::new(DVector::from_vec(r.mu), sigma)
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Invalid("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// One full parameter draw: global weights, transition rows, emissions and
/// the initial-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelStateRepr", into = "ModelStateRepr")]
pub struct ModelState {
    pub beta: Vec<f64>,
    pub beta_remainder: f64,
    pub pi: DMatrix<f64>,
    pub theta: Vec<EmissionParams>,
    pub initial_dist: Vec<f64>,
}

impl ModelState {
    pub const STOCHASTIC_TOL: f64 = 1e-9;

    pub fn new(
        beta: Vec<f64>,
        beta_remainder: f64,
        pi: DMatrix<f64>,
        theta: Vec<EmissionParams>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let state = Self {
            beta,
            beta_remainder,
            pi,
            theta,
            initial_dist,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn num_states(&self) -> usize {
        self.theta.len()
    }

    pub fn dim(&self) -> usize {
        self.theta.first().map_or(0, EmissionParams::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.theta.len();
        if l == 0 {
            return Err(Error::Invalid("model has no states".into()));
        }
        if self.beta.len() != l || self.initial_dist.len() != l || self.pi.shape() != (l, l) {
            return Err(Error::Invalid(format!(
                "inconsistent state counts: theta {l}, beta {}, initial {}, pi {:?}",
                self.beta.len(),
                self.initial_dist.len(),
                self.pi.shape()
            )));
        }
        let d = self.dim();
        if let Some(p) = self.theta.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.dim(),
            });
        }
        if self.beta.iter().any(|b| !(*b >= 0.0)) || !(self.beta_remainder >= 0.0) {
            return Err(Error::Domain("negative global weight".into()));
        }
        let total = self.beta.iter().sum::<f64>() + self.beta_remainder;
        if (total - 1.0).abs() > Self::STOCHASTIC_TOL {
            return Err(Error::Domain(format!("global weights sum to {total}")));
        }
        for (i, row) in self.pi.row_iter().enumerate() {
            check_probability_vector(row.iter().copied(), &format!("pi row {i}"))?;
        }
        check_probability_vector(self.initial_dist.iter().copied(), "initial distribution")
    }

    /// Relabel states so that new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let l = self.num_states();
        let mut seen = vec![false; l];
        if perm.len() != l
            || perm
                .iter()
                .any(|&p| p >= l || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Invalid("not a permutation".into()));
        }
        Ok(Self {
            beta: perm.iter().map(|&p| self.beta[p]).collect(),
            beta_remainder: self.beta_remainder,
            pi: DMatrix::from_fn(l, l, |i, j| self.pi[(perm[i], perm[j])]),
            theta: perm.iter().map(|&p| self.theta[p].clone()).collect(),
            initial_dist: perm.iter().map(|&p| self.initial_dist[p]).collect(),
        })
    }
}

fn check_probability_vector(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for v in values {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{what} has invalid entry {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > ModelState::STOCHASTIC_TOL {
        return Err(Error::Domain(format!("{what} sums to {sum}")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelStateRepr {
    beta: Vec<f64>,
    beta_remainder: f64,
    pi: Vec<Vec<f64>>,
    theta: Vec<EmissionParams>,
    initial_dist: Vec<f64>,
}

impl From<ModelState> for ModelStateRepr {
    fn from(m: ModelState) -> Self {
        Self {
            beta: m.beta,
            beta_remainder: m.beta_remainder,
            pi: matrix_rows(&m.pi),
            theta: m.theta,
            initial_dist: m.initial_dist,
        }
    }
}

impl TryFrom<ModelStateRepr> for ModelState {
    type Error = Error;

    fn try_from(r: ModelStateRepr) -> Result<Self> {
        let pi = matrix_from_rows(&r.pi)?;
        Self::new(r.beta, r.beta_remainder, pi, r.theta, r.initial_dist)
    }
}
