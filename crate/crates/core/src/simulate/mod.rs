//! Particle simulation, Brownian bridges, synthetic data and trajectory files.

mod bridge;
mod dataset;
mod euler;
mod generate;

pub use bridge::{fill_bridge, sample_bridge, BridgeSpec};
pub use dataset::TrajectoryDataset;
pub use euler::{euler_maruyama, euler_maruyama_with_jumps, Dynamics, Jump};
pub use generate::{
    draw_jumps, eight_gaussian_means, generate, generative_dataset, irregular_mask,
    sample_eight_gaussians, GenerativeData, GenerativeSpec, Generated, GeneratorSpec, Target,
};
