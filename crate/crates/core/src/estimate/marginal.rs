use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::diffgraph::{Graph, NodeId, Tensor};
use crate::drift::{Architecture, DriftModel};
use crate::error::{Error, Result};
use crate::flow::MarginalDensity;
use crate::simulate::TrajectoryDataset;

use super::girsanov::PathSet;
use super::trainer::{self, BatchObjective};
use super::{Estimator, TrainConfig, TrainReport};

/// A drift recorded on the tape: `(graph, params, rows, times, rng) -> rows × d`.
pub type DriftFn<'a> = dyn Fn(&mut Graph, &[f64], NodeId, &[f64], &mut dyn RngCore) -> Result<NodeId> + 'a;

/// Monte-Carlo settings of the compatibility penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompatibilitySpec {
    pub samples: usize,
    pub steps: usize,
    pub sigma: f64,
}

/// Per-point compatibility penalty
/// `(log p̂_{t0}(x) − mean_k log p̂_{t1}(Z_k))²`, where the `Z_k` are Euler paths
/// of the drift started at `x` at `t0` and run to `t1`. Returns an `m × 1` node
/// differentiable in both the drift and the density parameters.
#[allow(clippy::too_many_arguments)]
pub fn compatibility_criterion(
    g: &mut Graph,
    params: &[f64],
    drift: &DriftFn<'_>,
    density: &dyn MarginalDensity,
    x: &Tensor,
    t0: &[f64],
    t1: &[f64],
    spec: CompatibilitySpec,
    rng: &mut dyn RngCore,
) -> Result<NodeId> {
    let (m, d) = x.shape();
    if t0.len() != m || t1.len() != m {
        return Err(Error::usage("one start and end time per point is required"));
    }
    if spec.samples == 0 || spec.steps == 0 {
        return Err(Error::usage("compatibility needs at least one sample and one step"));
    }
    if t0.iter().zip(t1).any(|(a, b)| !(b > a)) {
        return Err(Error::usage("compatibility interval must have positive length"));
    }
    let big_m = spec.samples;
    let counts = vec![big_m; m];
    let rep: Vec<usize> = (0..m).flat_map(|r| std::iter::repeat_n(r, big_m)).collect();
    let rows = rep.len();
    let xin = g.input(x.clone());
    let mut z = g.gather_rows(xin, rep.clone());
    let h: Vec<f64> = rep.iter().map(|&r| (t1[r] - t0[r]) / spec.steps as f64).collect();
    let mut hmat = Tensor::zeros(rows, d);
    let mut noise_scale = Tensor::zeros(rows, d);
    for r in 0..rows {
        for c in 0..d {
            hmat.set(r, c, h[r]);
            noise_scale.set(r, c, spec.sigma * h[r].sqrt());
        }
    }
    let hn = g.input(hmat);
    for s in 0..spec.steps {
        let times: Vec<f64> = rep.iter().zip(&h).map(|(&r, hr)| t0[r] + s as f64 * hr).collect();
        let b = drift(g, params, z, &times, rng)?;
        let step = g.mul(b, hn);
        let mut xi = Tensor::zeros(rows, d);
        for (v, sc) in xi.data.iter_mut().zip(&noise_scale.data) {
            *v = sc * rng.sample::<f64, _>(StandardNormal);
        }
        let xin = g.input(xi);
        let moved = g.add(z, step);
        z = g.add(moved, xin);
    }
    let t_end: Vec<f64> = rep.iter().map(|&r| t1[r]).collect();
    let lp_end = density.log_prob(g, params, z, &t_end)?;
    let mean_end = g.segment_mean(lp_end, counts);
    let lp_start = density.log_prob(g, params, xin, t0)?;
    let gap = g.sub(lp_start, mean_end);
    let cc = g.square(gap);
    if !g.value(cc).is_finite() {
        return Err(Error::numeric("non-finite log-density in compatibility penalty"));
    }
    Ok(cc)
}

/// Joint training of the drift and its marginal flow: maximizes the Girsanov
/// likelihood plus the flow log-density of the observations, minus
/// `cc_weight` times the compatibility penalty summed over each particle's steps.
pub fn train_ml(model: &mut DriftModel, ds: &TrajectoryDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.estimator != Estimator::MarginalLaw {
        return Err(Error::config("configuration does not select the marginal-law estimator"));
    }
    if model.kind() != Architecture::MarginalLaw {
        return Err(Error::config("marginal-law training needs the marginal-law architecture"));
    }
    if ds.dim() != model.dim() {
        return Err(Error::config("dataset and drift dimensions differ"));
    }
    let set = PathSet::from_regular(ds)?;
    if set.len() < 2 {
        return Err(Error::usage("training needs at least two time points"));
    }
    let frozen = model.clone();
    let flow = frozen.flow().expect("marginal-law model has a flow").clone();
    let spec = CompatibilitySpec { samples: cfg.cc_samples, steps: cfg.cc_steps, sigma: cfg.sigma };
    let steps_per_unit = set.len() - 1;
    trainer::run(model, cfg, set.units(), |g, params, ctx| {
        let rows = set.rows(ctx.units, false);
        let (ll, _) = rows.loglik(g, &frozen, params, cfg.sigma, ctx.rng)?;

        let l = set.len();
        let mut pts = Vec::with_capacity(ctx.units.len() * l * set.d);
        let mut times = Vec::with_capacity(ctx.units.len() * l);
        for &u in ctx.units {
            for s in 0..l {
                pts.extend_from_slice(set.state(u, s));
                times.push(set.grid[s]);
            }
        }
        let xn = g.input(Tensor::new(times.len(), set.d, pts));
        let lp = flow.log_prob(g, params, xn, &times)?;
        let lp_sum = g.sum(lp);
        let mut total = g.add(ll, lp_sum);

        let mut penalty = None;
        let candidates = ctx.units.len() * steps_per_unit;
        let n_pairs = cfg.cc_points.min(candidates);
        if n_pairs > 0 && cfg.cc_weight > 0.0 {
            let mut picked = sample_indices(&mut *ctx.rng, candidates, n_pairs).into_vec();
            picked.sort_unstable();
            let mut x = Vec::with_capacity(n_pairs * set.d);
            let (mut t0, mut t1) = (Vec::with_capacity(n_pairs), Vec::with_capacity(n_pairs));
            for p in picked {
                let (u, s) = (ctx.units[p / steps_per_unit], p % steps_per_unit);
                x.extend_from_slice(set.state(u, s));
                t0.push(set.grid[s]);
                t1.push(set.grid[s + 1]);
            }
            let drift = |g: &mut Graph, p: &[f64], z: NodeId, ts: &[f64], r: &mut dyn RngCore| {
                frozen.eval_ml(g, p, z, ts, r)
            };
            let cc = compatibility_criterion(
                g,
                params,
                &drift,
                &flow,
                &Tensor::new(n_pairs, set.d, x),
                &t0,
                &t1,
                spec,
                &mut *ctx.rng,
            )?;
            let cc_mean = g.value(cc).data.iter().sum::<f64>() / n_pairs as f64;
            penalty = Some(cc_mean);
            let cc_sum = g.sum(cc);
            let scale = cfg.cc_weight * (steps_per_unit * ctx.units.len()) as f64 / n_pairs as f64;
            let weighted = g.scale(cc_sum, -scale);
            total = g.add(total, weighted);
        }
        Ok(BatchObjective { total, penalty })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::GaussianMarginal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_drift(g: &mut Graph, _: &[f64], z: NodeId, _: &[f64], _: &mut dyn RngCore) -> Result<NodeId> {
        let (r, c) = g.shape(z);
        Ok(g.input(Tensor::zeros(r, c)))
    }

    #[test]
    fn frozen_dynamics_and_density_give_zero() {
        let density = GaussianMarginal { mean0: vec![0.0], var0: vec![1.0], kappa: vec![0.0], sigma: 0.0 };
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(3, 1, vec![-1.0, 0.0, 2.0]);
        let spec = CompatibilitySpec { samples: 16, steps: 2, sigma: 0.0 };
        let cc = compatibility_criterion(&mut g, &[], &zero_drift, &density, &x, &[0.0; 3], &[0.5; 3], spec, &mut rng)
            .unwrap();
        assert!(g.value(cc).data.iter().all(|&v| v < 1e-24), "{:?}", g.value(cc));
    }

    /// Heat flow of a standard normal density under driftless motion: with
    /// `Z = x + W_Δ`, `E[log φ(Z)] = log φ(x) − Δ/2`, so the gap is exactly `Δ/2`
    /// in expectation and the squared estimate concentrates at `Δ²/4`.
    #[test]
    fn heat_flow_gap_matches_closed_form() {
        let density = GaussianMarginal { mean0: vec![0.0], var0: vec![1.0], kappa: vec![0.0], sigma: 0.0 };
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::new(1, 1, vec![0.7]);
        let spec = CompatibilitySpec { samples: 100_000, steps: 1, sigma: 1.0 };
        let cc = compatibility_criterion(&mut g, &[], &zero_drift, &density, &x, &[0.0], &[0.1], spec, &mut rng)
            .unwrap();
        let got = g.value(cc).item().sqrt();
        // sd of log φ(Z) is |x|·√Δ to first order
        let se = 0.7 * 0.1f64.sqrt() / (100_000f64).sqrt();
        assert!((got - 0.05).abs() < 4.0 * se, "{got}");
    }

    #[test]
    fn rejects_empty_interval() {
        let density = GaussianMarginal { mean0: vec![0.0], var0: vec![1.0], kappa: vec![0.0], sigma: 1.0 };
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::new(1, 1, vec![0.0]);
        let spec = CompatibilitySpec { samples: 1, steps: 1, sigma: 1.0 };
        let r = compatibility_criterion(&mut g, &[], &zero_drift, &density, &x, &[0.1], &[0.1], spec, &mut rng);
        assert!(r.is_err());
    }
}
