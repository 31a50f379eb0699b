//! Training configuration: a JSON file with any HyperParams field plus the
//! run schedule, overridden by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use primseg::{HyperParams, RunConfig};
use serde_json::{Map, Value};

const SCHEDULE_KEYS: [&str; 5] = ["sweeps", "burn_in", "thin", "seed", "chains"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub hyper: HyperParams,
    pub run: RunConfig,
    pub chains: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            hyper: HyperParams::default(),
            run: RunConfig::default(),
            chains: 1,
        }
    }
}

fn as_count(key: &str, v: &Value) -> Result<u64> {
    v.as_u64()
        .with_context(|| format!("config field {key:?} must be a non-negative integer, got {v}"))
}

impl TrainSettings {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut map: Map<String, Value> =
            serde_json::from_str(text).context("config must be a JSON object")?;
        let mut out = Self::default();
        for key in SCHEDULE_KEYS {
            let Some(v) = map.remove(key) else { continue };
            let n = as_count(key, &v)?;
            match key {
                "sweeps" => out.run.sweeps = n as usize,
                "burn_in" => out.run.burn_in = n as usize,
                "thin" => out.run.thin = n as usize,
                "seed" => out.run.seed = n,
                "chains" => out.chains = n as usize,
                _ => unreachable!(),
            }
        }
        out.hyper = serde_json::from_value(Value::Object(map)).context("bad hyperparameters")?;
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.hyper.validate(dim)?;
        self.run.validate()?;
        if self.chains == 0 {
            bail!("--chains must be at least 1");
        }
        Ok(())
    }
}
