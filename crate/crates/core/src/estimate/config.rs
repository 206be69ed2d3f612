use serde::{Deserialize, Serialize};

use crate::diffgraph::AdamWConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Discretized Girsanov likelihood on fully observed paths.
    Mle,
    /// Girsanov likelihood averaged over Brownian bridges between observations.
    Bridge,
    /// Girsanov likelihood plus the flow's data log-density minus the compatibility penalty.
    MarginalLaw,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mle" => Ok(Estimator::Mle),
            "bridge" => Ok(Estimator::Bridge),
            "marginal_law" | "ml" => Ok(Estimator::MarginalLaw),
            _ => Err(Error::config(format!("unknown estimator '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub estimator: Estimator,
    pub epochs: usize,
    /// Training units per optimizer step: particles, or (particle, bridge) pairs.
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Known diffusion scale of the data.
    pub sigma: f64,
    /// Bridges drawn per particle when observations leave gaps.
    pub bridges: usize,
    /// Sub-intervals inserted between consecutive dataset times.
    pub substeps: usize,
    /// Keep the first epoch's bridges instead of redrawing them.
    pub cache_bridges: bool,
    pub cc_weight: f64,
    /// Monte-Carlo paths per compatibility evaluation.
    pub cc_samples: usize,
    /// Observed (particle, time) pairs per batch at which the penalty is evaluated.
    pub cc_points: usize,
    /// Euler steps between consecutive times inside the penalty.
    pub cc_steps: usize,
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            estimator: Estimator::Mle,
            epochs: 500,
            batch_size: 10,
            optimizer: AdamWConfig::default(),
            seed: 0,
            sigma: 1.0,
            bridges: 30,
            substeps: 1,
            cache_bridges: false,
            cc_weight: 1.0,
            cc_samples: 8,
            cc_points: 32,
            cc_steps: 1,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config("sigma must be positive"));
        }
        if self.bridges == 0 || self.substeps == 0 || self.cc_samples == 0 || self.cc_steps == 0 {
            return Err(Error::config("bridges, substeps, cc_samples and cc_steps must be positive"));
        }
        if !(self.cc_weight >= 0.0) {
            return Err(Error::config("cc_weight must be non-negative"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}
