use log::{debug, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::messages::{backward_from_table, sample_states_from_table};
use super::{
    emission_loglik, joint_loglik, sample_auxiliary_counts, sample_beta, sample_concentrations,
    sample_emissions, sample_initial_dist, sample_transitions, StateSequence, TransitionCounts,
};
use crate::error::{Error, Result};
use crate::model::{ConcentrationState, EmissionPrior, HyperParams, ModelState};
use crate::observations::Observations;

/// Run length and retention schedule of one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sweeps: 1000,
            burn_in: 500,
            thin: 5,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return Err(Error::Invalid(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Invalid("thin must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether the sample produced by sweep `sweep` (0-based) is retained.
    pub fn retains(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in).is_multiple_of(self.thin)
    }
}

/// A retained draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSample {
    pub sweep: usize,
    pub loglik: f64,
    pub concentrations: ConcentrationState,
    pub model: ModelState,
    pub states: StateSequence,
}

/// Output of a sampler run: retained draws and the per-sweep log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsChain {
    pub samples: Vec<ChainSample>,
    pub loglik_trace: Vec<f64>,
    pub seed: u64,
    pub sweep_count: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl GibbsChain {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            samples: Vec::new(),
            loglik_trace: Vec::new(),
            seed: config.seed,
            sweep_count: 0,
            burn_in: config.burn_in,
            thin: config.thin,
        }
    }

    fn schedule(&self) -> RunConfig {
        RunConfig {
            sweeps: self.sweep_count,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
        }
    }

    /// Retained sample with the highest joint log-likelihood; earliest wins ties.
    pub fn map_sample(&self) -> Option<&ChainSample> {
        self.samples
            .iter()
            .fold(None, |best: Option<&ChainSample>, s| match best {
                Some(b) if b.loglik >= s.loglik => Some(b),
                _ => Some(s),
            })
    }

    /// Run `sweeps` more sweeps of `sampler`, recording the trace and retained draws.
    pub fn advance(&mut self, sampler: &mut Sampler<'_>, sweeps: usize) -> Result<()> {
        for _ in 0..sweeps {
            let sweep = sampler.completed_sweeps();
            let loglik = sampler.sweep()?;
            self.loglik_trace.push(loglik);
            self.sweep_count = sampler.completed_sweeps();
            if self.schedule().retains(sweep) {
                self.samples.push(sampler.snapshot(sweep, loglik));
            }
        }
        Ok(())
    }
}

/// Frame `t` of `T` goes to state `⌊t·L/T⌋`.
fn block_labels(frames: usize, num_states: usize) -> Vec<usize> {
    (0..frames).map(|t| t * num_states / frames).collect()
}

/// Mutable state of one blocked Gibbs chain over a fixed observation sequence.
pub struct Sampler<'a> {
    obs: &'a Observations,
    hyper: HyperParams,
    prior: EmissionPrior,
    seed: u64,
    rng: ChaCha8Rng,
    concentrations: ConcentrationState,
    model: ModelState,
    states: StateSequence,
    sweeps: usize,
}

impl<'a> Sampler<'a> {
    /// Initialize: concentrations at their prior means, uniform `β`, the frames
    /// cut into `L` contiguous blocks with one state each, then parameters
    /// drawn given that assignment.
    ///
    /// Starting over-segmented matters: surplus states empty out within a few
    /// sweeps, whereas a state that mixes several regimes can only be split by
    /// a fresh state drawn from the diffuse prior, which almost never fits
    /// better in high dimension.
    pub fn new(obs: &'a Observations, hyper: &HyperParams, seed: u64) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Invalid("observation sequence is empty".into()));
        }
        let prior = EmissionPrior::from_observations(hyper, obs)?;
        if hyper.b_alpha != hyper.b_kappa {
            warn!(
                "b_alpha ({}) != b_kappa ({}): the (alpha + kappa) prior uses a mean-matched shared rate",
                hyper.b_alpha, hyper.b_kappa
            );
        }
        let l = hyper.truncation;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let concentrations = ConcentrationState::prior_mean(hyper);
        let beta = vec![1.0 / l as f64; l];
        let labels = block_labels(obs.len(), l);
        let states = StateSequence::from_labels(labels);

        let counts = TransitionCounts::from_states(&states, l)?;
        let theta = sample_emissions(obs, &states, &prior, l, &mut rng)?;
        let pi = sample_transitions(
            &counts,
            &beta,
            concentrations.alpha,
            concentrations.kappa,
            &mut rng,
        )?;
        let initial = sample_initial_dist(
            states.labels().first().copied(),
            &beta,
            concentrations.alpha,
            &mut rng,
        )?;
        let model = ModelState::new(beta, 0.0, pi, theta, initial)?;
        Ok(Self {
            obs,
            hyper: hyper.clone(),
            prior,
            seed,
            rng,
            concentrations,
            model,
            states,
            sweeps: 0,
        })
    }

    /// Rebuild a sampler mid-chain. `word_pos` is the generator position.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn restore(
        obs: &'a Observations,
        hyper: &HyperParams,
        seed: u64,
        word_pos: u128,
        concentrations: ConcentrationState,
        model: ModelState,
        states: StateSequence,
        sweeps: usize,
    ) -> Result<Self> {
        if model.dim() != obs.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: obs.dim(),
            });
        }
        if model.num_states() != hyper.truncation || states.len() != obs.len() {
            return Err(Error::Invalid(
                "checkpoint state does not match the data or truncation".into(),
            ));
        }
        let prior = EmissionPrior::from_observations(hyper, obs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(word_pos);
        Ok(Self {
            obs,
            hyper: hyper.clone(),
            prior,
            seed,
            rng,
            concentrations,
            model,
            states,
            sweeps,
        })
    }

    pub fn observations(&self) -> &'a Observations {
        self.obs
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn states(&self) -> &StateSequence {
        &self.states
    }

    pub fn concentrations(&self) -> ConcentrationState {
        self.concentrations
    }

    pub fn completed_sweeps(&self) -> usize {
        self.sweeps
    }

    fn snapshot(&self, sweep: usize, loglik: f64) -> ChainSample {
        ChainSample {
            sweep,
            loglik,
            concentrations: self.concentrations,
            model: self.model.clone(),
            states: self.states.clone(),
        }
    }

    /// One full sweep; returns the joint log-likelihood at its end.
    pub fn sweep(&mut self) -> Result<f64> {
        let sweep = self.sweeps;
        let l = self.hyper.truncation;
        let rng = &mut self.rng;

        let lik = emission_loglik(self.obs, &self.model)?;
        let log_pi: DMatrix<f64> = self.model.pi.map(f64::ln);
        let messages = backward_from_table(&self.model.pi, &log_pi, &lik);
        self.states = sample_states_from_table(&self.model, &log_pi, &lik, &messages, rng)?;

        let counts = TransitionCounts::from_states(&self.states, l)?;
        let c = self.concentrations;
        let aux = sample_auxiliary_counts(&counts, &self.model.beta, c.alpha, c.kappa, rng)?;
        let (beta, remainder) = sample_beta(&aux.mbar, c.gamma, rng)?;
        let pi = sample_transitions(&counts, &beta, c.alpha, c.kappa, rng)?;
        let initial =
            sample_initial_dist(self.states.labels().first().copied(), &beta, c.alpha, rng)?;
        let theta = sample_emissions(self.obs, &self.states, &self.prior, l, rng)?;
        self.model = ModelState::new(beta, remainder, pi, theta, initial)?;
        self.concentrations = sample_concentrations(&c, &aux, &counts, &self.hyper, rng)?;

        let loglik = joint_loglik(self.obs, &self.model, &self.states).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                what: "sweep",
                index: sweep,
            },
            other => other,
        })?;
        self.sweeps += 1;
        debug!(
            "sweep {sweep}: loglik {loglik:.3}, used states {}, alpha {:.3} gamma {:.3} kappa {:.3}",
            counts.occupancy.iter().filter(|&&n| n > 0).count(),
            self.concentrations.alpha,
            self.concentrations.gamma,
            self.concentrations.kappa
        );
        Ok(loglik)
    }
}

/// Run a full chain from a fresh initialization.
pub fn run_gibbs(
    obs: &Observations,
    hyper: &HyperParams,
    config: &RunConfig,
) -> Result<GibbsChain> {
    config.validate()?;
    let mut sampler = Sampler::new(obs, hyper, config.seed)?;
    let mut chain = GibbsChain::new(config);
    chain.advance(&mut sampler, config.sweeps)?;
    Ok(chain)
}

/// Run `chains` independent chains on scoped threads, chain `i` seeded with
/// `config.seed + i`. Returns each chain with its final sampler state, in
/// chain order.
pub fn run_chains<'a>(
    obs: &'a Observations,
    hyper: &HyperParams,
    config: &RunConfig,
    chains: usize,
) -> Result<Vec<(Sampler<'a>, GibbsChain)>> {
    config.validate()?;
    if chains == 0 {
        return Err(Error::Invalid("need at least one chain".into()));
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..chains)
            .map(|i| {
                let cfg = RunConfig {
                    seed: config.seed.wrapping_add(i as u64),
                    ..*config
                };
                scope.spawn(move || -> Result<(Sampler<'a>, GibbsChain)> {
                    let mut sampler = Sampler::new(obs, hyper, cfg.seed)?;
                    let mut chain = GibbsChain::new(&cfg);
                    chain.advance(&mut sampler, cfg.sweeps)?;
                    Ok((sampler, chain))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain thread panicked"))
            .collect()
    })
}

/// Index of the chain whose MAP sample has the highest joint log-likelihood;
/// ties go to the lowest index.
pub fn best_chain<'c>(chains: impl IntoIterator<Item = &'c GibbsChain>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, chain) in chains.into_iter().enumerate() {
        if let Some(s) = chain.map_sample() {
            if best.is_none_or(|(_, ll)| s.loglik > ll) {
                best = Some((i, s.loglik));
            }
        }
    }
    best.map(|(i, _)| i)
}
