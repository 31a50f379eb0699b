//! Weak-limit blocked Gibbs sampler for the sticky HDP-HMM.
//!
//! One sweep resamples, in order: the state sequence (backward messages then
//! forward sampling), the CRF auxiliary table counts with the sticky override
//! correction, the global weights `β`, the transition rows `π` and initial
//! distribution, the emission parameters, and finally the concentrations.

mod checkpoint;
mod concentration;
mod counts;
mod emissions;
mod gibbs;
mod messages;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use concentration::sample_concentrations;
pub use counts::{
    sample_auxiliary_counts, sample_beta, sample_initial_dist, sample_transitions, AuxiliaryCounts,
    TransitionCounts,
};
pub use emissions::sample_emissions;
pub use gibbs::{best_chain, run_chains, run_gibbs, ChainSample, GibbsChain, RunConfig, Sampler};
pub use messages::{
    backward_messages, emission_loglik, forward_log_marginal, joint_loglik,
    log_marginal_from_messages, sample_log_categorical, sample_states, viterbi,
};

use crate::error::{Error, Result};

/// Latent primitive labels `p_1..p_T`, each in `[0, L)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateSequence(Vec<usize>);

impl StateSequence {
    pub fn new(labels: Vec<usize>, num_states: usize) -> Result<Self> {
        if let Some((t, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_states) {
            return Err(Error::Invalid(format!(
                "label {l} at frame {t} outside [0, {num_states})"
            )));
        }
        Ok(Self(labels))
    }

    /// Wrap labels without a truncation bound check.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}
