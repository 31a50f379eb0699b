use rand::Rng;
use rand_distr::{Bernoulli, Beta, Distribution, Gamma};

use super::{AuxiliaryCounts, TransitionCounts};
use crate::error::{Error, Result};
use crate::model::{ConcentrationState, HyperParams};

/// Auxiliary-variable refreshes per call; each is a valid Gibbs step on its own.
const INNER_ITERATIONS: usize = 10;

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Domain(format!("Gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng).max(f64::MIN_POSITIVE))
}

fn beta_draw<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| Error::Domain(format!("Beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng))
}

/// Shared rate for the `(α + κ)` Gamma prior. Exact when `b_α = b_κ`; otherwise
/// the rate that preserves the prior mean of `α + κ`.
pub(crate) fn shared_rate(hyper: &HyperParams) -> f64 {
    if hyper.b_alpha == hyper.b_kappa {
        hyper.b_alpha
    } else {
        (hyper.a_alpha + hyper.a_kappa)
            / (hyper.a_alpha / hyper.b_alpha + hyper.a_kappa / hyper.b_kappa)
    }
}

/// Resample `(α, γ, κ)` given the table counts.
///
/// `α + κ` is drawn with the multi-restaurant Beta/Bernoulli auxiliary scheme
/// over the raw table counts, and the split `ρ = κ / (α + κ)` from
/// `Beta(a_κ + Σw, a_α + m·· − Σw)`. `γ` uses the single-DP auxiliary scheme over
/// the override-corrected counts `m̄`.
pub fn sample_concentrations<R: Rng + ?Sized>(
    state: &ConcentrationState,
    aux: &AuxiliaryCounts,
    counts: &TransitionCounts,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<ConcentrationState> {
    let shape_ak = hyper.a_alpha + hyper.a_kappa;
    let rate_ak = shared_rate(hyper);
    let tables = aux.total_tables() as f64;
    let customers: Vec<f64> = (0..counts.num_states())
        .map(|j| counts.row_total(j) as f64)
        .filter(|n| *n > 0.0)
        .collect();

    let mut alpha_kappa = state.alpha + state.kappa;
    if customers.is_empty() {
        alpha_kappa = gamma_draw(shape_ak, rate_ak, rng)?;
    } else {
        for _ in 0..INNER_ITERATIONS {
            let mut sum_log_r = 0.0;
            let mut sum_s = 0.0;
            for &n in &customers {
                sum_log_r += beta_draw(alpha_kappa + 1.0, n, rng)?.ln();
                let s = Bernoulli::new(n / (n + alpha_kappa))
                    .map_err(|e| Error::Domain(e.to_string()))?;
                if s.sample(rng) {
                    sum_s += 1.0;
                }
            }
            alpha_kappa = gamma_draw(shape_ak + tables - sum_s, rate_ak - sum_log_r, rng)?;
        }
    }

    let w = aux.total_override() as f64;
    let rho = beta_draw(hyper.a_kappa + w, hyper.a_alpha + tables - w, rng)?;
    let alpha = ((1.0 - rho) * alpha_kappa).max(f64::MIN_POSITIVE);
    let kappa = rho * alpha_kappa;

    let mbar_cols = aux.mbar_column_sums();
    let mbar_total: f64 = mbar_cols.iter().sum::<u64>() as f64;
    let used = mbar_cols.iter().filter(|&&c| c > 0).count() as f64;
    let gamma = if mbar_total == 0.0 {
        gamma_draw(hyper.a_gamma, hyper.b_gamma, rng)?
    } else {
        let mut g = state.gamma;
        for _ in 0..INNER_ITERATIONS {
            let eta = beta_draw(g + 1.0, mbar_total, rng)?;
            let rate = hyper.b_gamma - eta.ln();
            let odds = (hyper.a_gamma + used - 1.0) / (mbar_total * rate);
            let shape = if rng.random::<f64>() < odds / (1.0 + odds) {
                hyper.a_gamma + used
            } else {
                hyper.a_gamma + used - 1.0
            };
            g = gamma_draw(shape, rate, rng)?;
        }
        g
    };

    ConcentrationState::new(alpha, gamma, kappa)
}
