use nalgebra::DMatrix;
use rand::Rng;

use super::StateSequence;
use crate::error::{Error, Result};
use crate::model::{GaussianEval, ModelState};
use crate::observations::Observations;

fn check_dims(obs: &Observations, model: &ModelState) -> Result<()> {
    if obs.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: obs.dim(),
        });
    }
    Ok(())
}

/// `T × L` table of `log N(o_t; θ_k)`.
pub fn emission_loglik(obs: &Observations, model: &ModelState) -> Result<DMatrix<f64>> {
    check_dims(obs, model)?;
    let evals = model
        .theta
        .iter()
        .map(GaussianEval::new)
        .collect::<Result<Vec<_>>>()?;
    let mut table = DMatrix::zeros(obs.len(), evals.len());
    for (k, eval) in evals.iter().enumerate() {
        for t in 0..obs.len() {
            table[(t, k)] = eval.logpdf(&obs.frame(t));
        }
    }
    Ok(table)
}

fn log_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(f64::ln)
}

/// `log Σ_k exp(a_k + b_k)` over paired slices.
#[inline]
fn lse_pair(a: impl Iterator<Item = f64> + Clone, b: &[f64]) -> f64 {
    let max = a
        .clone()
        .zip(b)
        .map(|(x, y)| x + y)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = a.zip(b).map(|(x, y)| (x + y - max).exp()).sum();
    max + sum.ln()
}

/// Rows whose scaled sum falls below this are recomputed fully in log space.
const UNDERFLOW_GUARD: f64 = 1e-280;

pub(crate) fn backward_from_table(
    pi: &DMatrix<f64>,
    log_pi: &DMatrix<f64>,
    lik: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (t_len, l) = lik.shape();
    let mut msgs = DMatrix::zeros(t_len, l);
    let mut next = vec![0.0; l];
    let mut scaled = vec![0.0; l];
    for t in (0..t_len.saturating_sub(1)).rev() {
        for k in 0..l {
            next[k] = lik[(t + 1, k)] + msgs[(t + 1, k)];
        }
        let max = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            for j in 0..l {
                msgs[(t, j)] = f64::NEG_INFINITY;
            }
            continue;
        }
        for k in 0..l {
            scaled[k] = (next[k] - max).exp();
        }
        for j in 0..l {
            let mut sum = 0.0;
            for k in 0..l {
                sum += pi[(j, k)] * scaled[k];
            }
            msgs[(t, j)] = if sum > UNDERFLOW_GUARD {
                max + sum.ln()
            } else {
                lse_pair(log_pi.row(j).iter().copied(), &next)
            };
        }
    }
    msgs
}

/// Log-domain backward messages `m_t(j) = log p(o_{t+1:T} | p_t = j)`;
/// the final row is zero.
pub fn backward_messages(obs: &Observations, model: &ModelState) -> Result<DMatrix<f64>> {
    let lik = emission_loglik(obs, model)?;
    Ok(backward_from_table(&model.pi, &log_matrix(&model.pi), &lik))
}

/// `log p(o_{1:T})` from the backward messages at `t = 1`.
pub fn log_marginal_from_messages(
    obs: &Observations,
    model: &ModelState,
    messages: &DMatrix<f64>,
) -> Result<f64> {
    if obs.is_empty() {
        return Ok(0.0);
    }
    let lik = emission_loglik(obs, model)?;
    let first: Vec<f64> = (0..model.num_states())
        .map(|j| lik[(0, j)] + messages[(0, j)])
        .collect();
    Ok(lse_pair(model.initial_dist.iter().map(|p| p.ln()), &first))
}

/// `log p(o_{1:T})` by the forward recursion, independent of the backward pass.
pub fn forward_log_marginal(obs: &Observations, model: &ModelState) -> Result<f64> {
    if obs.is_empty() {
        return Ok(0.0);
    }
    let lik = emission_loglik(obs, model)?;
    let log_pi = log_matrix(&model.pi);
    let l = model.num_states();
    let mut alpha: Vec<f64> = (0..l)
        .map(|j| model.initial_dist[j].ln() + lik[(0, j)])
        .collect();
    for t in 1..obs.len() {
        alpha = (0..l)
            .map(|k| lse_pair(log_pi.column(k).iter().copied(), &alpha) + lik[(t, k)])
            .collect();
    }
    Ok(crate::linalg::log_sum_exp(&alpha))
}

/// Sample an index with probability proportional to `exp(log_weights)`.
/// Weights are renormalized by their maximum before exponentiation.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Domain(format!(
            "conditional has no finite weight (max log weight {max})"
        )));
    }
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last_positive = k;
            acc += w;
            if target < acc {
                return Ok(k);
            }
        }
    }
    Ok(last_positive)
}

pub(crate) fn sample_states_from_table<R: Rng + ?Sized>(
    model: &ModelState,
    log_pi: &DMatrix<f64>,
    lik: &DMatrix<f64>,
    messages: &DMatrix<f64>,
    rng: &mut R,
) -> Result<StateSequence> {
    let (t_len, l) = lik.shape();
    let mut labels = Vec::with_capacity(t_len);
    let mut w = vec![0.0; l];
    for t in 0..t_len {
        for j in 0..l {
            let prior = match labels.last() {
                None => model.initial_dist[j].ln(),
                Some(&prev) => log_pi[(prev, j)],
            };
            w[j] = prior + lik[(t, j)] + messages[(t, j)];
        }
        let k = sample_log_categorical(&w, rng)
            .map_err(|e| Error::Domain(format!("state sampling at frame {t}: {e}")))?;
        labels.push(k);
    }
    Ok(StateSequence::from_labels(labels))
}

/// Draw `p_{1:T}` jointly from its exact conditional given the model, using
/// precomputed backward messages.
pub fn sample_states<R: Rng + ?Sized>(
    obs: &Observations,
    model: &ModelState,
    messages: &DMatrix<f64>,
    rng: &mut R,
) -> Result<StateSequence> {
    let lik = emission_loglik(obs, model)?;
    if messages.shape() != lik.shape() {
        return Err(Error::Invalid(format!(
            "messages shape {:?} does not match {:?}",
            messages.shape(),
            lik.shape()
        )));
    }
    sample_states_from_table(model, &log_matrix(&model.pi), &lik, messages, rng)
}

/// `log p(o_{1:T}, p_{1:T} | model)`.
pub fn joint_loglik(obs: &Observations, model: &ModelState, states: &StateSequence) -> Result<f64> {
    check_dims(obs, model)?;
    if states.len() != obs.len() {
        return Err(Error::Invalid(format!(
            "{} labels for {} frames",
            states.len(),
            obs.len()
        )));
    }
    let l = model.num_states();
    let labels = states.labels();
    if let Some(&bad) = labels.iter().find(|&&k| k >= l) {
        return Err(Error::IndexOutOfRange { index: bad, len: l });
    }
    let evals = model
        .theta
        .iter()
        .map(GaussianEval::new)
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (t, &k) in labels.iter().enumerate() {
        let transition = match t {
            0 => model.initial_dist[k].ln(),
            _ => model.pi[(labels[t - 1], k)].ln(),
        };
        let term = transition + evals[k].logpdf(&obs.frame(t));
        if !term.is_finite() {
            return Err(Error::NonFinite {
                what: "frame",
                index: t,
            });
        }
        total += term;
    }
    Ok(total)
}

/// Most probable state path under `model` (max-product recursion).
pub fn viterbi(obs: &Observations, model: &ModelState) -> Result<StateSequence> {
    let lik = emission_loglik(obs, model)?;
    let log_pi = log_matrix(&model.pi);
    let (t_len, l) = lik.shape();
    if t_len == 0 {
        return Ok(StateSequence::from_labels(Vec::new()));
    }
    let mut score: Vec<f64> = (0..l)
        .map(|j| model.initial_dist[j].ln() + lik[(0, j)])
        .collect();
    let mut back = vec![vec![0usize; l]; t_len];
    for t in 1..t_len {
        let mut next = vec![f64::NEG_INFINITY; l];
        for k in 0..l {
            let (best_j, best) = (0..l).map(|j| (j, score[j] + log_pi[(j, k)])).fold(
                (0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            );
            next[k] = best + lik[(t, k)];
            back[t][k] = best_j;
        }
        score = next;
    }
    let mut k = (0..l).fold(0, |best, j| if score[j] > score[best] { j } else { best });
    let mut labels = vec![0; t_len];
    for t in (0..t_len).rev() {
        labels[t] = k;
        k = back[t][k];
    }
    Ok(StateSequence::from_labels(labels))
}
