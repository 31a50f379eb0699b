use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChainSample, GibbsChain, Sampler, StateSequence};
use crate::error::{Error, Result};
use crate::model::{ConcentrationState, HyperParams, ModelState};
use crate::observations::Observations;

pub const CHECKPOINT_FORMAT: &str = "primseg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON snapshot of a chain: enough to resume it bit-for-bit and to
/// segment with its MAP sample. Retained samples other than the MAP one are
/// not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyper: HyperParams,
    pub seed: u64,
    /// Completed sweeps.
    pub sweep: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub dim: usize,
    pub frames: usize,
    pub data_fingerprint: String,
    /// ChaCha8 word position, decimal (exceeds u64).
    pub rng_word_pos: String,
    pub concentrations: ConcentrationState,
    pub model: ModelState,
    pub states: StateSequence,
    pub loglik_trace: Vec<f64>,
    pub map_sample: Option<ChainSample>,
}

impl Checkpoint {
    pub fn capture(sampler: &Sampler<'_>, chain: &GibbsChain) -> Self {
        let obs = sampler.observations();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            hyper: sampler.hyper().clone(),
            seed: sampler.seed(),
            sweep: sampler.completed_sweeps(),
            burn_in: chain.burn_in,
            thin: chain.thin,
            dim: obs.dim(),
            frames: obs.len(),
            data_fingerprint: obs.fingerprint(),
            rng_word_pos: sampler.rng_word_pos().to_string(),
            concentrations: sampler.concentrations(),
            model: sampler.model().clone(),
            states: sampler.states().clone(),
            loglik_trace: chain.loglik_trace.clone(),
            map_sample: chain.map_sample().cloned(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!(
                "not a checkpoint (format {:?})",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.hyper.validate(self.dim)?;
        if self.model.dim() != self.dim || self.model.num_states() != self.hyper.truncation {
            return Err(Error::Invalid(
                "checkpoint model does not match its header".into(),
            ));
        }
        if self.loglik_trace.len() != self.sweep || self.states.len() != self.frames {
            return Err(Error::Invalid(
                "checkpoint trace or states have the wrong length".into(),
            ));
        }
        self.rng_word_pos
            .parse::<u128>()
            .map_err(|e| Error::Invalid(format!("bad rng_word_pos: {e}")))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Whether `obs` is the sequence this chain was trained on.
    pub fn matches(&self, obs: &Observations) -> bool {
        obs.dim() == self.dim
            && obs.len() == self.frames
            && obs.fingerprint() == self.data_fingerprint
    }

    /// Rebuild the sampler and a chain record holding the trace and MAP sample.
    pub fn resume<'a>(&self, obs: &'a Observations) -> Result<(Sampler<'a>, GibbsChain)> {
        self.validate()?;
        if obs.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: obs.dim(),
            });
        }
        if !self.matches(obs) {
            return Err(Error::Invalid(
                "observations differ from the checkpointed training data".into(),
            ));
        }
        let word_pos = self.rng_word_pos.parse::<u128>().expect("validated");
        let sampler = Sampler::restore(
            obs,
            &self.hyper,
            self.seed,
            word_pos,
            self.concentrations,
            self.model.clone(),
            self.states.clone(),
            self.sweep,
        )?;
        let chain = GibbsChain {
            samples: self.map_sample.iter().cloned().collect(),
            loglik_trace: self.loglik_trace.clone(),
            seed: self.seed,
            sweep_count: self.sweep,
            burn_in: self.burn_in,
            thin: self.thin,
        };
        Ok((sampler, chain))
    }
}
