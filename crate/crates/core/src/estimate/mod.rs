//! Drift estimators and their training loops.

mod config;
mod fokker_planck;
mod girsanov;
mod marginal;
mod probe;
mod report;
mod trainer;

pub use config::{Estimator, TrainConfig};
pub use fokker_planck::{linear_fp_elbo, FpElboSpec};
pub use girsanov::{bridge_elbo, girsanov_loglik, girsanov_sum, train_bridge, train_mle};
pub use marginal::{compatibility_criterion, train_ml, CompatibilitySpec, DriftFn};
pub use probe::im_norm_probe;
pub use report::TrainReport;

use crate::drift::DriftModel;
use crate::error::Result;
use crate::simulate::TrajectoryDataset;

/// Dispatches on the configured estimator.
pub fn train(model: &mut DriftModel, ds: &TrajectoryDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    match cfg.estimator {
        Estimator::Mle => train_mle(model, ds, cfg),
        Estimator::Bridge => train_bridge(model, ds, cfg),
        Estimator::MarginalLaw => train_ml(model, ds, cfg),
    }
}
