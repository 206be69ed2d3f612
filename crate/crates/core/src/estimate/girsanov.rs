use rand::RngCore;

use crate::diffgraph::{Graph, NodeId, Tensor};
use crate::drift::{Architecture, DriftModel, PopulationBatch};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::simulate::{fill_bridge, TrajectoryDataset};

use super::trainer::{self, BatchObjective};
use super::{Estimator, TrainConfig, TrainReport};

/// `Σ ⟨b, ΔX⟩ / σ² − ½ Σ ‖b‖² Δt / σ²` over the rows of `drift`.
pub fn girsanov_sum(g: &mut Graph, drift: NodeId, dx: &Tensor, dt: &Tensor, sigma: f64) -> NodeId {
    let dxn = g.input(dx.clone());
    let dtn = g.input(dt.clone());
    let cross = g.dot(drift, dxn);
    let sq = g.square(drift);
    let energy = g.dot(sq, dtn);
    let half = g.scale(energy, -0.5);
    let total = g.add(cross, half);
    g.scale(total, 1.0 / (sigma * sigma))
}

/// Girsanov log-likelihood of particle `particle` over its consecutive
/// observations, relative to driftless motion with the same noise.
pub fn girsanov_loglik(
    g: &mut Graph,
    model: &DriftModel,
    params: &[f64],
    ds: &TrajectoryDataset,
    particle: usize,
    sigma: f64,
    rng: &mut dyn RngCore,
) -> Result<NodeId> {
    if particle >= ds.n_particles() {
        return Err(Error::usage(format!("particle {particle} out of range")));
    }
    if ds.dim() != model.dim() {
        return Err(Error::config("dataset and drift dimensions differ"));
    }
    let obs = ds.observed_indices(particle);
    if obs.len() < 2 {
        return Err(Error::usage("Girsanov likelihood needs at least two observed times"));
    }
    let d = ds.dim();
    let m = obs.len() - 1;
    let mut x = Vec::with_capacity(m * d);
    let mut dx = Vec::with_capacity(m * d);
    let mut dt = Vec::with_capacity(m * d);
    let mut times = Vec::with_capacity(m);
    for w in obs.windows(2) {
        let (a, b) = (ds.state(particle, w[0]), ds.state(particle, w[1]));
        x.extend_from_slice(a);
        dx.extend(a.iter().zip(b).map(|(p, q)| q - p));
        let h = ds.times()[w[1]] - ds.times()[w[0]];
        dt.extend(std::iter::repeat_n(h, d));
        times.push(ds.times()[w[0]]);
    }
    let pop = if model.kind().uses_population() {
        let groups: Vec<Tensor> = obs[..m].iter().map(|&j| ds.population(j)).collect();
        Some(PopulationBatch::grouped(&groups, &vec![1; m])?)
    } else {
        None
    };
    let xn = g.input(Tensor::new(m, d, x));
    let b = model.eval(g, params, xn, &times, pop.as_ref(), rng)?;
    Ok(girsanov_sum(g, b, &Tensor::new(m, d, dx), &Tensor::new(m, d, dt), sigma))
}

/// Complete paths of every particle on a common grid, possibly in several
/// imputed replicates. Unit `u` is particle `u % N` of replicate `u / N`.
#[derive(Clone, Debug)]
pub(crate) struct PathSet {
    pub grid: Vec<f64>,
    pub n: usize,
    pub reps: usize,
    pub d: usize,
    pub states: Vec<f64>,
}

impl PathSet {
    pub fn from_regular(ds: &TrajectoryDataset) -> Result<Self> {
        if !ds.is_regular() {
            return Err(Error::usage("dataset has missing observations; use the bridge estimator"));
        }
        let (n, k, d) = (ds.n_particles(), ds.n_times(), ds.dim());
        let mut states = Vec::with_capacity(n * k * d);
        for i in 0..n {
            for j in 0..k {
                states.extend_from_slice(ds.state(i, j));
            }
        }
        Ok(PathSet { grid: ds.times().to_vec(), n, reps: 1, d, states })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn units(&self) -> usize {
        self.n * self.reps
    }

    pub fn state(&self, unit: usize, s: usize) -> &[f64] {
        let off = (unit * self.len() + s) * self.d;
        &self.states[off..off + self.d]
    }

    /// Query rows, increments and (for the empirical measure) populations of
    /// every step of the given units.
    pub fn rows(&self, units: &[usize], with_population: bool) -> StepRows {
        let (l, d) = (self.len(), self.d);
        let m = units.len() * (l - 1);
        let mut x = Vec::with_capacity(m * d);
        let mut dx = Vec::with_capacity(m * d);
        let mut dt = Vec::with_capacity(m * d);
        let mut times = Vec::with_capacity(m);
        let mut index = Vec::new();
        for &u in units {
            let rep = u / self.n;
            for s in 0..l - 1 {
                let (a, b) = (self.state(u, s), self.state(u, s + 1));
                x.extend_from_slice(a);
                dx.extend(a.iter().zip(b).map(|(p, q)| q - p));
                dt.extend(std::iter::repeat_n(self.grid[s + 1] - self.grid[s], d));
                times.push(self.grid[s]);
                if with_population {
                    index.extend((0..self.n).map(|i| (rep * self.n + i) * l + s));
                }
            }
        }
        let population = with_population.then(|| PopulationBatch {
            points: Tensor::new(self.units() * l, d, self.states.clone()),
            index,
            counts: vec![self.n; m],
        });
        StepRows {
            x: Tensor::new(m, d, x),
            dx: Tensor::new(m, d, dx),
            dt: Tensor::new(m, d, dt),
            times,
            population,
        }
    }
}

pub(crate) struct StepRows {
    pub x: Tensor,
    pub dx: Tensor,
    pub dt: Tensor,
    pub times: Vec<f64>,
    pub population: Option<PopulationBatch>,
}

impl StepRows {
    pub fn loglik(
        &self,
        g: &mut Graph,
        model: &DriftModel,
        params: &[f64],
        sigma: f64,
        rng: &mut dyn RngCore,
    ) -> Result<(NodeId, NodeId)> {
        let xn = g.input(self.x.clone());
        let b = model.eval(g, params, xn, &self.times, self.population.as_ref(), rng)?;
        Ok((girsanov_sum(g, b, &self.dx, &self.dt, sigma), b))
    }
}

/// Grid refinement and bridge imputation for partially observed data.
struct Imputer<'a> {
    ds: &'a TrajectoryDataset,
    grid: Vec<f64>,
    substeps: usize,
    reps: usize,
    sigma: f64,
    seed: u64,
}

impl<'a> Imputer<'a> {
    fn new(ds: &'a TrajectoryDataset, cfg: &TrainConfig) -> Self {
        let substeps = cfg.substeps;
        let t = ds.times();
        let mut grid = Vec::with_capacity((t.len() - 1) * substeps + 1);
        for w in t.windows(2) {
            let h = (w[1] - w[0]) / substeps as f64;
            grid.extend((0..substeps).map(|s| w[0] + s as f64 * h));
        }
        grid.push(t[t.len() - 1]);
        let gaps = substeps > 1 || !ds.is_regular();
        Imputer {
            ds,
            grid,
            substeps,
            reps: if gaps { cfg.bridges } else { 1 },
            sigma: cfg.sigma,
            seed: cfg.seed,
        }
    }

    fn impute(&self, epoch: usize) -> PathSet {
        let (n, d, l) = (self.ds.n_particles(), self.ds.dim(), self.grid.len());
        let mut states = vec![0.0; self.reps * n * l * d];
        for r in 0..self.reps {
            for i in 0..n {
                let unit = r * n + i;
                let path = &mut states[unit * l * d..(unit + 1) * l * d];
                let obs = self.ds.observed_indices(i);
                for w in obs.windows(2) {
                    let (a, b) = (w[0] * self.substeps, w[1] * self.substeps);
                    let seg = &mut path[a * d..(b + 1) * d];
                    let mut rng = stream(self.seed, "bridge", &[epoch as u64, r as u64, i as u64, a as u64]);
                    fill_bridge(
                        self.ds.state(i, w[0]),
                        self.ds.state(i, w[1]),
                        &self.grid[a..=b],
                        self.sigma,
                        &mut rng,
                        seg,
                    );
                }
            }
        }
        PathSet { grid: self.grid.clone(), n, reps: self.reps, d, states }
    }
}

fn check_estimator(cfg: &TrainConfig, want: Estimator) -> Result<()> {
    if cfg.estimator != want {
        return Err(Error::config(format!(
            "configuration selects the {:?} estimator, not {want:?}",
            cfg.estimator
        )));
    }
    Ok(())
}

fn check_model(model: &DriftModel, ds: &TrajectoryDataset) -> Result<()> {
    if ds.dim() != model.dim() {
        return Err(Error::config(format!(
            "dataset dimension {} does not match drift dimension {}",
            ds.dim(),
            model.dim()
        )));
    }
    if ds.n_times() < 2 {
        return Err(Error::usage("training needs at least two time points"));
    }
    Ok(())
}

fn train_paths<P>(model: &mut DriftModel, cfg: &TrainConfig, units: usize, mut paths: P) -> Result<TrainReport>
where
    P: FnMut(usize) -> std::rc::Rc<PathSet>,
{
    let with_pop = model.kind().uses_population();
    let frozen = model.clone();
    let sigma = cfg.sigma;
    trainer::run(model, cfg, units, |g, params, ctx| {
        let set = paths(ctx.epoch);
        let rows = set.rows(ctx.units, with_pop);
        let (total, _) = rows.loglik(g, &frozen, params, sigma, ctx.rng)?;
        Ok(BatchObjective { total, penalty: None })
    })
}

/// Maximizes the mean Girsanov log-likelihood of fully observed paths.
pub fn train_mle(model: &mut DriftModel, ds: &TrajectoryDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    check_estimator(cfg, Estimator::Mle)?;
    check_model(model, ds)?;
    if model.kind() == Architecture::MarginalLaw {
        return Err(Error::config("the marginal-law architecture trains with its own estimator"));
    }
    let set = std::rc::Rc::new(PathSet::from_regular(ds)?);
    train_paths(model, cfg, set.units(), |_| set.clone())
}

/// Maximizes the Girsanov likelihood averaged over Brownian bridges that fill
/// the gaps between observations and the inserted sub-steps. A training unit
/// is one (particle, bridge) pair; with no gaps to fill there is one bridge per
/// particle and this coincides with [`train_mle`].
pub fn train_bridge(model: &mut DriftModel, ds: &TrajectoryDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    check_estimator(cfg, Estimator::Bridge)?;
    check_model(model, ds)?;
    if model.kind() == Architecture::MarginalLaw {
        return Err(Error::config("the marginal-law architecture trains with its own estimator"));
    }
    cfg.validate()?;
    let imputer = Imputer::new(ds, cfg);
    let units = imputer.reps * ds.n_particles();
    let mut cache: Option<(usize, std::rc::Rc<PathSet>)> = None;
    let cache_all = cfg.cache_bridges;
    train_paths(model, cfg, units, move |epoch| {
        let key = if cache_all { 0 } else { epoch };
        match &cache {
            Some((e, set)) if *e == key => set.clone(),
            _ => {
                let set = std::rc::Rc::new(imputer.impute(key));
                cache = Some((key, set.clone()));
                set
            }
        }
    })
}

/// Bridge ELBO summed over `units` for the imputation drawn at `epoch`; the
/// quantity [`train_bridge`] maximizes for one batch.
#[allow(clippy::too_many_arguments)]
pub fn bridge_elbo(
    g: &mut Graph,
    model: &DriftModel,
    params: &[f64],
    ds: &TrajectoryDataset,
    cfg: &TrainConfig,
    epoch: usize,
    units: &[usize],
    rng: &mut dyn RngCore,
) -> Result<NodeId> {
    check_model(model, ds)?;
    cfg.validate()?;
    let set = Imputer::new(ds, cfg).impute(epoch);
    if let Some(&u) = units.iter().find(|&&u| u >= set.units()) {
        return Err(Error::usage(format!("training unit {u} out of range")));
    }
    let rows = set.rows(units, model.kind().uses_population());
    Ok(rows.loglik(g, model, params, cfg.sigma, rng)?.0)
}
