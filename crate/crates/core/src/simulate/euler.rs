use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffgraph::Tensor;
use crate::drift::{DriftModel, PopulationBatch, Population, TrueDrift};
use crate::error::{Error, Result};

use super::TrajectoryDataset;

/// A drift that can be advanced for a whole particle cloud at once.
pub trait Dynamics {
    fn dim(&self) -> usize;

    /// Drift of every row of `states` (`N × d`) at time `t`, with the cloud
    /// itself as the population.
    fn drift_all(&self, states: &Tensor, t: f64, rng: &mut dyn RngCore) -> Result<Tensor>;
}

impl Dynamics for TrueDrift {
    fn dim(&self) -> usize {
        TrueDrift::dim(self)
    }

    fn drift_all(&self, states: &Tensor, t: f64, _rng: &mut dyn RngCore) -> Result<Tensor> {
        let pop = Population::new(states.cols, states.data.clone(), t);
        let data = self.eval_batch(&states.data, &pop, t)?;
        Ok(Tensor::new(states.rows, states.cols, data))
    }
}

impl Dynamics for DriftModel {
    fn dim(&self) -> usize {
        DriftModel::dim(self)
    }

    fn drift_all(&self, states: &Tensor, t: f64, rng: &mut dyn RngCore) -> Result<Tensor> {
        let times = vec![t; states.rows];
        let pop = self
            .kind()
            .uses_population()
            .then(|| PopulationBatch::shared(states.clone(), states.rows));
        self.evaluate(states, &times, pop.as_ref(), rng)
    }
}

/// A common displacement of every coordinate of every particle, applied on
/// the transition out of grid index `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub step: usize,
    pub size: f64,
}

/// Euler-Maruyama with per-coordinate noise scales; all particles advance
/// synchronously, each step seeing the cloud of the previous step.
pub fn euler_maruyama(
    drift: &dyn Dynamics,
    init: &Tensor,
    times: &[f64],
    sigma: &[f64],
    rng: &mut dyn RngCore,
) -> Result<TrajectoryDataset> {
    euler_maruyama_with_jumps(drift, init, times, sigma, &[], rng)
}

pub fn euler_maruyama_with_jumps(
    drift: &dyn Dynamics,
    init: &Tensor,
    times: &[f64],
    sigma: &[f64],
    jumps: &[Jump],
    rng: &mut dyn RngCore,
) -> Result<TrajectoryDataset> {
    let snaps = simulate_snapshots(drift, init, times, sigma, jumps, rng)?;
    TrajectoryDataset::from_snapshots(times.to_vec(), &snaps)
}

pub(crate) fn simulate_snapshots(
    drift: &dyn Dynamics,
    init: &Tensor,
    times: &[f64],
    sigma: &[f64],
    jumps: &[Jump],
    rng: &mut dyn RngCore,
) -> Result<Vec<Tensor>> {
    let d = drift.dim();
    if init.cols != d || sigma.len() != d {
        return Err(Error::config(format!(
            "drift has dimension {d}, initial state {} and noise {}",
            init.cols,
            sigma.len()
        )));
    }
    if times.is_empty() || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("simulation times must be strictly increasing"));
    }
    if !init.is_finite() {
        return Err(Error::numeric("non-finite initial state"));
    }
    let mut snaps = Vec::with_capacity(times.len());
    snaps.push(init.clone());
    for (step, w) in times.windows(2).enumerate() {
        let dt = w[1] - w[0];
        let sq = dt.sqrt();
        let x = snaps.last().unwrap();
        let b = drift.drift_all(x, w[0], rng)?;
        let mut next = x.clone();
        for r in 0..x.rows {
            for c in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                let v = x.get(r, c) + b.get(r, c) * dt + sigma[c] * sq * noise;
                next.set(r, c, v);
            }
        }
        for j in jumps.iter().filter(|j| j.step == step) {
            next.data.iter_mut().for_each(|v| *v += j.size);
        }
        if !next.is_finite() {
            return Err(Error::numeric(format!("simulation blew up at step {}", step + 1)));
        }
        snaps.push(next);
    }
    Ok(snaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(k: usize, dt: f64) -> Vec<f64> {
        (0..k).map(|j| j as f64 * dt).collect()
    }

    #[test]
    fn frozen_dynamics_are_constant() {
        let drift = TrueDrift::Ou { kappa: vec![0.0, 0.0] };
        let init = Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = euler_maruyama(&drift, &init, &grid(5, 0.1), &[0.0, 0.0], &mut rng).unwrap();
        for j in 0..5 {
            assert_eq!(ds.population(j), init);
        }
    }

    #[test]
    fn deterministic_ou_step() {
        let drift = TrueDrift::Ou { kappa: vec![3.0, 2.0] };
        let init = Tensor::new(1, 2, vec![1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = euler_maruyama(&drift, &init, &[0.0, 0.05], &[0.0, 0.0], &mut rng).unwrap();
        assert!((ds.state(0, 1)[0] - (1.0 - 3.0 * 0.05)).abs() < 1e-15);
        assert!((ds.state(0, 1)[1] - (1.0 - 2.0 * 0.05)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_paths() {
        let drift = TrueDrift::Kuramoto { coupling: 2.0 };
        let init = Tensor::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let run = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            euler_maruyama(&drift, &init, &grid(10, 0.05), &[1.0, 1.0], &mut rng).unwrap()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn jump_shifts_every_particle() {
        let drift = TrueDrift::Ou { kappa: vec![0.0] };
        let init = Tensor::new(2, 1, vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let jumps = [Jump { step: 1, size: 7.5 }];
        let ds = euler_maruyama_with_jumps(&drift, &init, &grid(4, 0.1), &[0.0], &jumps, &mut rng).unwrap();
        assert_eq!(ds.population(1).data, vec![0.0, 1.0]);
        assert_eq!(ds.population(2).data, vec![7.5, 8.5]);
    }

    #[test]
    fn blow_up_reports_step() {
        let drift = TrueDrift::Ou { kappa: vec![-1e200] };
        let init = Tensor::new(1, 1, vec![1e200]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match euler_maruyama(&drift, &init, &grid(3, 1.0), &[0.0], &mut rng) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("step 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let drift = TrueDrift::Circle;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let init = Tensor::new(1, 1, vec![0.0]);
        assert!(euler_maruyama(&drift, &init, &[0.0, 1.0], &[1.0], &mut rng).is_err());
    }
}
