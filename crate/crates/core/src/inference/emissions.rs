use rand::Rng;

use super::StateSequence;
use crate::error::{Error, Result};
use crate::model::{EmissionParams, EmissionPrior};
use crate::observations::Observations;

/// Resample every state's emission parameters from its conjugate posterior.
/// States with no assigned frames are drawn from the prior.
pub fn sample_emissions<R: Rng + ?Sized>(
    obs: &Observations,
    states: &StateSequence,
    prior: &EmissionPrior,
    num_states: usize,
    rng: &mut R,
) -> Result<Vec<EmissionParams>> {
    if states.len() != obs.len() {
        return Err(Error::Invalid(format!(
            "{} labels for {} frames",
            states.len(),
            obs.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_states];
    for (t, &k) in states.labels().iter().enumerate() {
        members
            .get_mut(k)
            .ok_or(Error::IndexOutOfRange {
                index: k,
                len: num_states,
            })?
            .push(t);
    }
    members
        .iter()
        .map(|frames| prior.posterior_draw(obs, frames, rng))
        .collect()
}
