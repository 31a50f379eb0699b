use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};

use crate::error::{Error, Result};

/// Stick-breaking weights `βᵢ = νᵢ Π_{ℓ<i} (1 − ν_ℓ)` for the first `truncation`
/// sticks, plus the mass left on the unbroken remainder.
pub fn stick_breaking(nu: &[f64], truncation: usize) -> Result<(Vec<f64>, f64)> {
    if nu.len() != truncation {
        return Err(Error::Domain(format!(
            "expected {truncation} stick proportions, got {}",
            nu.len()
        )));
    }
    if let Some(bad) = nu.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!(
            "stick proportion {bad} outside [0, 1]"
        )));
    }
    let mut remaining = 1.0;
    let mut beta = Vec::with_capacity(truncation);
    for &v in nu {
        let b = v * remaining;
        beta.push(b);
        // Subtracting keeps Σβ + remainder = 1 to rounding of one subtraction per stick.
        remaining -= b;
    }
    Ok((beta, remaining.max(0.0)))
}

/// Draw truncated `GEM(γ)` weights from `Beta(1, γ)` sticks.
pub fn sample_gem<R: Rng + ?Sized>(
    gamma: f64,
    truncation: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!(
            "GEM concentration must be positive, got {gamma}"
        )));
    }
    let stick = Beta::new(1.0, gamma).map_err(|e| Error::Domain(e.to_string()))?;
    let nu: Vec<f64> = (0..truncation).map(|_| stick.sample(rng)).collect();
    stick_breaking(&nu, truncation)
}

/// Dirichlet parameter of the weak-limit sticky transition prior for row `i`:
/// `α β + κ eᵢ`. With `κ = 0` this is the plain HDP-HMM prior `α β`.
pub fn sticky_prior_vector(alpha: f64, beta: &[f64], kappa: f64, i: usize) -> Result<Vec<f64>> {
    if i >= beta.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: beta.len(),
        });
    }
    if !(alpha > 0.0) || !(kappa >= 0.0) {
        return Err(Error::Domain(format!(
            "need alpha > 0 and kappa >= 0, got alpha={alpha} kappa={kappa}"
        )));
    }
    let mut out: Vec<f64> = beta.iter().map(|b| alpha * b).collect();
    if kappa != 0.0 {
        out[i] += kappa;
    }
    Ok(out)
}

/// Smallest Dirichlet/Gamma shape used; tinier shapes are floored to this.
const MIN_SHAPE: f64 = 1e-300;

/// `ln X` for `X ~ Gamma(shape, 1)`, computed without underflow for tiny shapes
/// through `Gamma(a) = Gamma(a + 1) · U^{1/a}`.
pub fn log_gamma_sample<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape >= 0.0) || !shape.is_finite() {
        return Err(Error::Domain(format!("invalid Gamma shape {shape}")));
    }
    let shape = shape.max(MIN_SHAPE);
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
        return Ok(g.sample(rng).ln());
    }
    let g = Gamma::new(shape + 1.0, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = 1.0 - rng.random::<f64>();
    Ok(g.sample(rng).ln() + u.ln() / shape)
}

/// Draw from `Dirichlet(params)`. Entries sum to one within rounding; entries
/// with vanishing shape may come out as exact zeros.
pub fn sample_dirichlet<R: Rng + ?Sized>(params: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if params.is_empty() {
        return Err(Error::Domain("empty Dirichlet parameter".into()));
    }
    let logs = params
        .iter()
        .map(|&a| log_gamma_sample(a, rng))
        .collect::<Result<Vec<_>>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}
