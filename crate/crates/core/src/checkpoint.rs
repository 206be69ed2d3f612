//! Trained models on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::drift::{ArchitectureSpec, DriftModel};
use crate::error::{Error, Result};
use crate::estimate::Estimator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: ArchitectureSpec,
    pub estimator: Estimator,
    pub seed: u64,
    pub epochs: usize,
    /// Diffusion scale the model was trained with.
    pub sigma: f64,
    /// Time span of the training data.
    pub t_start: f64,
    pub t_end: f64,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &DriftModel, estimator: Estimator, seed: u64, epochs: usize, sigma: f64, span: (f64, f64)) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                architecture: model.spec().clone(),
                estimator,
                seed,
                epochs,
                sigma,
                t_start: span.0,
                t_end: span.1,
                param_count: model.param_count(),
            },
            params: model.params.clone(),
        }
    }

    /// Rebuilds the model, checking the parameter count against the architecture.
    pub fn model(&self) -> Result<DriftModel> {
        if self.params.len() != self.header.param_count {
            return Err(Error::config(format!(
                "checkpoint header lists {} parameters, file has {}",
                self.header.param_count,
                self.params.len()
            )));
        }
        DriftModel::with_params(&self.header.architecture, self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("checkpoint has non-finite parameters"));
        }
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
