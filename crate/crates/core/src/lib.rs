//! Segmentation of channelized driving time series into traffic primitives
//! with a sticky HDP-HMM (Gaussian emissions, weak-limit blocked Gibbs
//! sampling), plus primitive statistics and scenario re-synthesis.

// `!(x > 0.0)` is used on purpose throughout so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod formats;
pub mod inference;
pub mod ingest;
pub mod linalg;
pub mod model;
mod observations;
pub mod primitives;
pub mod simulate;

pub use error::{Error, Result};
pub use inference::{run_gibbs, Checkpoint, GibbsChain, RunConfig, Sampler, StateSequence};
pub use ingest::{load_csv, StepEvent, TrafficSequence};
pub use model::{ConcentrationState, EmissionParams, HyperParams, ModelState};
pub use observations::Observations;
