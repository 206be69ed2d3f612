use serde::{Deserialize, Serialize};

/// Summary of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    /// Mean objective per training unit for each epoch, in the direction being maximized.
    pub loss_trace: Vec<f64>,
    /// Mean compatibility penalty per epoch (marginal-law training only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cc_trace: Vec<f64>,
    pub epochs: usize,
    pub steps: usize,
    pub final_lr: f64,
    /// Not written to disk so that report files are reproducible.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl TrainReport {
    /// Everything except the wall-clock time.
    pub fn same_run(&self, other: &TrainReport) -> bool {
        self.seed == other.seed
            && self.loss_trace == other.loss_trace
            && self.cc_trace == other.cc_trace
            && self.epochs == other.epochs
            && self.steps == other.steps
            && self.final_lr == other.final_lr
    }
}
