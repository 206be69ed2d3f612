//! Drift functions: closed-form drifts of the synthetic systems and the
//! learnable architectures.

mod model;
mod truth;

pub use model::{Architecture, ArchitectureSpec, DriftModel, PopulationBatch};
pub use truth::{atlas_rate, opinion_kernel, Population, System, TrueDrift};
