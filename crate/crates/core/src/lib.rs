//! Simulation and drift estimation for interacting particle systems.

pub mod checkpoint;
pub mod diffgraph;
pub mod drift;
pub mod error;
pub mod experiment;
pub mod estimate;
pub mod flow;
pub mod metrics;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
