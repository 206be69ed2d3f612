//! Declarative experiments: data, model, training, evaluation and sampling,
//! driven by one JSON config.
//!
//! The `cmd_*` functions write their results under the configured output
//! directory; the functions they wrap work in memory.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::diffgraph::Tensor;
use crate::drift::{ArchitectureSpec, DriftModel, Population, PopulationBatch, System, TrueDrift};
use crate::error::{Error, Result};
use crate::estimate::{train, TrainConfig, TrainReport};
use crate::metrics::{crps_multivariate, ecdf_distances, energy_distance_sq, mean_sq_error, write_results, EvalGrid, MetricRecord};
use crate::rng::stream;
use crate::simulate::{euler_maruyama, generate, generative_dataset, Dynamics, GenerativeSpec, GeneratorSpec, TrajectoryDataset};

/// Synthetic benchmark data. Unset fields take the system's standard value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub system: System,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_irregular: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irregular: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
}

impl SyntheticData {
    pub fn new(system: System) -> Self {
        SyntheticData {
            system,
            sigma: None,
            t_end: None,
            dt: None,
            n_particles: None,
            n_irregular: None,
            irregular: None,
            obs_noise: None,
            jumps: None,
            init_std: None,
        }
    }

    pub fn resolve(&self, seed: u64) -> GeneratorSpec {
        let mut spec = GeneratorSpec::for_system(self.system);
        spec.sigma = self.sigma.unwrap_or(spec.sigma);
        spec.t_end = self.t_end.unwrap_or(spec.t_end);
        spec.dt = self.dt.unwrap_or(spec.dt);
        spec.n_particles = self.n_particles.unwrap_or(spec.n_particles);
        spec.n_irregular = self.n_irregular.unwrap_or(spec.n_irregular);
        spec.irregular = self.irregular.unwrap_or(spec.irregular);
        spec.obs_noise = self.obs_noise.unwrap_or(spec.obs_noise);
        spec.jumps = self.jumps.unwrap_or(spec.jumps);
        spec.init_std = self.init_std.unwrap_or(spec.init_std);
        spec.seed = seed;
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticData),
    /// Transport from `N(0, I)` to a target law. The experiment seed replaces `seed`.
    Generative(GenerativeSpec),
    /// Trajectory CSV files. `system` names the true drift when it is known.
    File {
        path: PathBuf,
        #[serde(default)]
        held_out: Option<PathBuf>,
        #[serde(default)]
        system: Option<System>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticData::new(System::Ou))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Drift error on the evaluation lattice, averaged over evenly spaced times.
    DriftMseGrid,
    /// Drift error at the clean training paths.
    DriftMsePaths,
    EnergyDistance,
    Crps,
    Ks,
    EcdfMean,
    EcdfP75,
    EcdfP90,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::DriftMseGrid,
        MetricKind::DriftMsePaths,
        MetricKind::EnergyDistance,
        MetricKind::Crps,
        MetricKind::Ks,
        MetricKind::EcdfMean,
        MetricKind::EcdfP75,
        MetricKind::EcdfP90,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::DriftMseGrid => "drift_mse_grid",
            MetricKind::DriftMsePaths => "drift_mse_paths",
            MetricKind::EnergyDistance => "energy_distance",
            MetricKind::Crps => "crps",
            MetricKind::Ks => "ks",
            MetricKind::EcdfMean => "ecdf_mean",
            MetricKind::EcdfP75 => "ecdf_p75",
            MetricKind::EcdfP90 => "ecdf_p90",
        }
    }

    fn needs_truth(self) -> bool {
        matches!(self, MetricKind::DriftMseGrid | MetricKind::DriftMsePaths)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub lo: f64,
    pub hi: f64,
    pub per_dim: usize,
    /// Number of evenly spaced data times at which the lattice error is taken.
    pub grid_times: usize,
    pub metrics: Vec<MetricKind>,
    /// Size of the generated ensemble. Unset: one path from each held-out initial state.
    pub samples: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            lo: -2.0,
            hi: 2.0,
            per_dim: 21,
            grid_times: 11,
            metrics: MetricKind::ALL.to_vec(),
            samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub n: usize,
    /// End time; defaults to the end of the training data.
    pub t_end: Option<f64>,
    /// Step size; defaults to the data's simulation step.
    pub dt: Option<f64>,
    /// Diffusion scale on every coordinate; defaults to the data's noise.
    pub sigma: Option<f64>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { n: 100, t_end: None, dt: None, sigma: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    /// `dim` is taken from the data.
    pub architecture: ArchitectureSpec,
    /// `seed` is replaced by the experiment seed.
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub generate: GenerateConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seed: 0,
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            architecture: ArchitectureSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(',') {
            return Err(Error::config("experiment name must be non-empty and free of commas"));
        }
        if let DataConfig::Synthetic(s) = &self.data {
            s.resolve(self.seed).validate()?;
        }
        self.architecture.validate()?;
        self.train.validate()?;
        if !(self.eval.hi > self.eval.lo) || self.eval.per_dim < 2 || self.eval.grid_times == 0 {
            return Err(Error::config("evaluation lattice needs lo < hi, per_dim ≥ 2 and grid_times ≥ 1"));
        }
        if self.eval.samples == Some(0) || self.generate.n == 0 {
            return Err(Error::config("sample counts must be positive"));
        }
        Ok(())
    }

    /// Training settings with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn architecture_for(&self, dim: usize) -> ArchitectureSpec {
        ArchitectureSpec { dim, ..self.architecture.clone() }
    }
}

/// Data of one experiment, materialized.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: TrajectoryDataset,
    pub held_out: Option<TrajectoryDataset>,
    /// Noise-free, fully observed training paths, when known.
    pub clean: Option<TrajectoryDataset>,
    pub truth: Option<TrueDrift>,
    /// Per-coordinate diffusion scale used when simulating a model.
    pub noise: Vec<f64>,
    /// Euler steps per data interval when simulating a model.
    pub substeps: usize,
    /// Standard deviation of the initial law.
    pub init_std: f64,
}

impl ExperimentData {
    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Reference paths for drift errors: the clean paths when available.
    pub fn reference(&self) -> &TrajectoryDataset {
        self.clean.as_ref().unwrap_or(&self.train)
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    match &cfg.data {
        DataConfig::Synthetic(s) => {
            let spec = s.resolve(cfg.seed);
            let g = generate(&spec)?;
            Ok(ExperimentData {
                train: g.observed,
                held_out: Some(g.held_out),
                clean: Some(g.clean),
                truth: Some(spec.drift()),
                noise: spec.noise_scales(),
                substeps: 1,
                init_std: spec.init_std,
            })
        }
        DataConfig::Generative(spec) => {
            let spec = GenerativeSpec { seed: cfg.seed, ..spec.clone() };
            let g = generative_dataset(&spec)?;
            let held_out =
                TrajectoryDataset::from_snapshots(vec![0.0, spec.t_end], &[g.held_out_initial, g.held_out_target])?;
            Ok(ExperimentData {
                train: g.train,
                held_out: Some(held_out),
                clean: None,
                truth: None,
                noise: vec![spec.sigma; spec.dim],
                substeps: spec.substeps(),
                init_std: 1.0,
            })
        }
        DataConfig::File { path, held_out, system } => {
            let read = |p: &PathBuf| {
                TrajectoryDataset::read_csv_file(p)
                    .map_err(|e| Error::config(format!("cannot load dataset {}: {e}", p.display())))
            };
            let train = read(path)?;
            let held_out = held_out.as_ref().map(read).transpose()?;
            let truth = system.map(TrueDrift::for_system);
            if let Some(t) = &truth {
                if t.dim() != train.dim() {
                    return Err(Error::config("dataset dimension does not match the named system"));
                }
            }
            Ok(ExperimentData {
                noise: vec![cfg.train.sigma; train.dim()],
                train,
                held_out,
                clean: None,
                truth,
                substeps: 1,
                init_std: 1.0,
            })
        }
    }
}

/// Trains a freshly initialized model on the experiment's training data.
pub fn fit(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<(DriftModel, TrainReport)> {
    let mut model = DriftModel::new(&cfg.architecture_for(data.dim()), cfg.seed)?;
    let report = train(&mut model, &data.train, &cfg.train_config())?;
    Ok((model, report))
}

/// What is being evaluated: a learned model or the true drift itself.
#[derive(Clone, Copy, Debug)]
pub enum Estimate<'a> {
    Model(&'a DriftModel),
    Truth(&'a TrueDrift),
}

impl Estimate<'_> {
    fn dynamics(&self) -> &dyn Dynamics {
        match self {
            Estimate::Model(m) => *m,
            Estimate::Truth(t) => *t,
        }
    }

    /// Drift at the rows of `points`, with `pop` as the particle cloud.
    fn drift_at(&self, points: &Tensor, pop: &Population, rng: &mut dyn RngCore) -> Result<Tensor> {
        match self {
            Estimate::Model(m) => {
                let times = vec![pop.t; points.rows];
                let batch = m.kind().uses_population().then(|| {
                    PopulationBatch::shared(Tensor::new(pop.len(), pop.dim, pop.points.clone()), points.rows)
                });
                m.evaluate(points, &times, batch.as_ref(), rng)
            }
            Estimate::Truth(t) => Ok(Tensor::new(points.rows, points.cols, t.eval_batch(&points.data, pop, pop.t)?)),
        }
    }
}

fn evenly_spaced(k: usize, count: usize) -> Vec<usize> {
    if count <= 1 || k <= 1 {
        return vec![0];
    }
    let count = count.min(k);
    let mut idx: Vec<usize> = (0..count).map(|i| (i * (k - 1) + (count - 1) / 2) / (count - 1)).collect();
    idx.dedup();
    idx
}

fn cloud(ds: &TrajectoryDataset, j: usize) -> Population {
    Population::new(ds.dim(), ds.population(j).data, ds.times()[j])
}

/// Lattice drift error averaged over `n_times` evenly spaced times of `reference`.
pub fn grid_mse(
    est: Estimate,
    truth: &TrueDrift,
    grid: &EvalGrid,
    reference: &TrajectoryDataset,
    n_times: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let idx = evenly_spaced(reference.n_times(), n_times);
    let mut total = 0.0;
    for &j in &idx {
        let pop = cloud(reference, j);
        let b_est = est.drift_at(&grid.points, &pop, rng)?;
        let b_true = Estimate::Truth(truth).drift_at(&grid.points, &pop, rng)?;
        total += mean_sq_error(&b_est, &b_true)?;
    }
    Ok(total / idx.len() as f64)
}

/// Drift error at every particle of `reference`, averaged over its times.
pub fn path_mse(est: Estimate, truth: &TrueDrift, reference: &TrajectoryDataset, rng: &mut dyn RngCore) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..reference.n_times() {
        let pop = cloud(reference, j);
        let points = reference.population(j);
        let b_est = est.drift_at(&points, &pop, rng)?;
        let b_true = Estimate::Truth(truth).drift_at(&points, &pop, rng)?;
        total += mean_sq_error(&b_est, &b_true)?;
    }
    Ok(total / reference.n_times() as f64)
}

/// Splits every interval of `times` into `substeps` equal parts.
pub fn refine_grid(times: &[f64], substeps: usize) -> Vec<f64> {
    let mut out = vec![times[0]];
    for w in times.windows(2) {
        for s in 1..=substeps {
            out.push(if s == substeps { w[1] } else { w[0] + (w[1] - w[0]) * s as f64 / substeps as f64 });
        }
    }
    out
}

pub fn gaussian_init(n: usize, d: usize, std: f64, rng: &mut dyn RngCore) -> Tensor {
    let data = (0..n * d).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(n, d, data)
}

/// Terminal ensemble of `est` simulated over the held-out time span.
pub fn simulate_terminal(
    est: Estimate,
    data: &ExperimentData,
    held_out: &TrajectoryDataset,
    samples: Option<usize>,
    seed: u64,
) -> Result<Tensor> {
    let init = match samples {
        Some(n) => gaussian_init(n, data.dim(), data.init_std, &mut stream(seed, "eval_init", &[])),
        None => held_out.initial(),
    };
    let times = refine_grid(held_out.times(), data.substeps);
    let paths = euler_maruyama(est.dynamics(), &init, &times, &data.noise, &mut stream(seed, "eval_paths", &[]))?;
    Ok(paths.terminal())
}

fn ecdf_per_coordinate(a: &Tensor, b: &Tensor) -> Result<[f64; 4]> {
    let mut acc = [0.0; 4];
    for k in 0..a.cols {
        let ca: Vec<f64> = (0..a.rows).map(|r| a.get(r, k)).collect();
        let cb: Vec<f64> = (0..b.rows).map(|r| b.get(r, k)).collect();
        let e = ecdf_distances(&ca, &cb)?;
        for (s, v) in acc.iter_mut().zip([e.mean, e.p75, e.p90, e.ks]) {
            *s += v / a.cols as f64;
        }
    }
    Ok(acc)
}

/// Computes the configured metrics. Drift metrics need a known true drift and
/// distributional metrics need held-out data; others are skipped with a warning.
pub fn evaluate(cfg: &ExperimentConfig, data: &ExperimentData, est: Estimate) -> Result<Vec<MetricRecord>> {
    let mut rng = stream(cfg.seed, "eval", &[]);
    let mut out = Vec::new();
    let mut terminal: Option<(Tensor, Tensor)> = None;
    for &kind in &cfg.eval.metrics {
        if kind.needs_truth() && data.truth.is_none() {
            log::warn!("skipping {}: true drift unknown", kind.name());
            continue;
        }
        let value = match kind {
            MetricKind::DriftMseGrid => {
                let grid = EvalGrid::lattice(cfg.eval.lo, cfg.eval.hi, cfg.eval.per_dim, data.dim())?;
                grid_mse(est, data.truth.as_ref().unwrap(), &grid, data.reference(), cfg.eval.grid_times, &mut rng)?
            }
            MetricKind::DriftMsePaths => path_mse(est, data.truth.as_ref().unwrap(), data.reference(), &mut rng)?,
            _ => {
                let Some(held_out) = &data.held_out else {
                    log::warn!("skipping {}: no held-out data", kind.name());
                    continue;
                };
                if terminal.is_none() {
                    let gen = simulate_terminal(est, data, held_out, cfg.eval.samples, cfg.seed)?;
                    terminal = Some((gen, held_out.terminal()));
                }
                let (gen, target) = terminal.as_ref().unwrap();
                match kind {
                    MetricKind::EnergyDistance => energy_distance_sq(gen, target)?,
                    MetricKind::Crps => {
                        let mut total = 0.0;
                        for r in 0..target.rows {
                            total += crps_multivariate(gen, target.row_slice(r))?;
                        }
                        total / target.rows as f64
                    }
                    MetricKind::EcdfMean => ecdf_per_coordinate(gen, target)?[0],
                    MetricKind::EcdfP75 => ecdf_per_coordinate(gen, target)?[1],
                    MetricKind::EcdfP90 => ecdf_per_coordinate(gen, target)?[2],
                    MetricKind::Ks => ecdf_per_coordinate(gen, target)?[3],
                    MetricKind::DriftMseGrid | MetricKind::DriftMsePaths => unreachable!(),
                }
            }
        };
        out.push(MetricRecord { experiment: cfg.name.clone(), metric: kind.name().into(), value, seed: cfg.seed });
    }
    Ok(out)
}

fn data_dt(cfg: &ExperimentConfig, data_times: Option<&[f64]>) -> Option<f64> {
    match &cfg.data {
        DataConfig::Synthetic(s) => Some(s.resolve(cfg.seed).dt),
        DataConfig::Generative(g) => Some(g.dt),
        DataConfig::File { .. } => data_times.filter(|t| t.len() > 1).map(|t| t[1] - t[0]),
    }
}

/// Samples from a trained model, returned as full paths.
pub fn sample_paths(cfg: &ExperimentConfig, ck: &Checkpoint, seed: u64) -> Result<TrajectoryDataset> {
    let model = ck.model()?;
    let d = model.dim();
    let gc = &cfg.generate;
    let (init_std, noise) = match &cfg.data {
        DataConfig::Synthetic(s) => {
            let spec = s.resolve(cfg.seed);
            (spec.init_std, spec.noise_scales())
        }
        DataConfig::Generative(g) => (1.0, vec![g.sigma; d]),
        DataConfig::File { .. } => (1.0, vec![ck.header.sigma; d]),
    };
    let noise = match gc.sigma {
        Some(s) => vec![s; d],
        None => noise,
    };
    if noise.len() != d {
        return Err(Error::config("checkpoint dimension does not match the configured data"));
    }
    let t0 = ck.header.t_start;
    let t1 = gc.t_end.unwrap_or(ck.header.t_end);
    let dt = gc.dt.or_else(|| data_dt(cfg, None)).unwrap_or((t1 - t0) / 100.0);
    if !(t1 > t0) || !(dt > 0.0) {
        return Err(Error::config("generation needs t_end after the start time and dt > 0"));
    }
    let k = ((t1 - t0) / dt).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=k).map(|j| if j == k { t1 } else { t0 + j as f64 * dt }).collect();
    let init = gaussian_init(gc.n, d, init_std, &mut stream(seed, "generate_init", &[]));
    euler_maruyama(&model, &init, &times, &noise, &mut stream(seed, "generate_paths", &[]))
}

/// Files written by a command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outputs {
    pub files: Vec<PathBuf>,
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

fn write_json<T: Serialize>(path: PathBuf, value: &T, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    files.push(path);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub seed: u64,
}

/// Writes `dataset.csv`, `held_out.csv` (when present), `summary.json` and a config echo.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Outputs> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let dir = prepare_out(cfg)?;
    let mut files = Vec::new();
    write_json(dir.join("config.json"), cfg, &mut files)?;
    let path = dir.join("dataset.csv");
    data.train.write_csv_file(&path)?;
    files.push(path);
    if let Some(h) = &data.held_out {
        let path = dir.join("held_out.csv");
        h.write_csv_file(&path)?;
        files.push(path);
    }
    let summary = DatasetSummary { n: data.train.n_particles(), k: data.train.n_times(), d: data.dim(), seed: cfg.seed };
    write_json(dir.join("summary.json"), &summary, &mut files)?;
    Ok(Outputs { files })
}

/// Writes `checkpoint.json` and `report.json`. A diverged run still writes
/// its partial report before the error is returned.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Outputs> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let dir = prepare_out(cfg)?.to_path_buf();
    let mut files = Vec::new();
    write_json(dir.join("config.json"), cfg, &mut files)?;
    let (model, report) = match fit(cfg, &data) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, step, reason, partial }) => {
            write_json(dir.join("report.json"), &*partial, &mut files)?;
            return Err(Error::Diverged { epoch, step, reason, partial });
        }
        Err(e) => return Err(e),
    };
    log::info!("trained {} epochs in {:.1}s", report.epochs, report.wall_clock_s);
    let times = data.train.times();
    let ck = Checkpoint::new(
        &model,
        cfg.train.estimator,
        cfg.seed,
        report.epochs,
        cfg.train.sigma,
        (times[0], times[times.len() - 1]),
    );
    let path = dir.join("checkpoint.json");
    ck.save(&path)?;
    files.push(path);
    write_json(dir.join("report.json"), &report, &mut files)?;
    Ok(Outputs { files })
}

/// Where the model under evaluation comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum EvalSource {
    Checkpoint(PathBuf),
    /// The data's true drift in place of a model.
    Truth,
}

/// Writes `metrics.csv`.
pub fn cmd_eval(cfg: &ExperimentConfig, source: &EvalSource) -> Result<Outputs> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let records = match source {
        EvalSource::Truth => {
            let truth = data.truth.clone().ok_or_else(|| Error::config("the configured data has no known drift"))?;
            evaluate(cfg, &data, Estimate::Truth(&truth))?
        }
        EvalSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)
                .map_err(|e| Error::config(format!("cannot load checkpoint {}: {e}", path.display())))?;
            let expected = cfg.architecture_for(data.dim());
            if ck.header.architecture != expected {
                return Err(Error::config("checkpoint architecture does not match the configured architecture"));
            }
            let model = ck.model()?;
            evaluate(cfg, &data, Estimate::Model(&model))?
        }
    };
    let dir = prepare_out(cfg)?;
    let path = dir.join("metrics.csv");
    let mut buf = Vec::new();
    write_results(&mut buf, &records, true)?;
    std::fs::write(&path, buf)?;
    Ok(Outputs { files: vec![path] })
}

/// Writes `samples.csv` with the full paths and `terminal.csv` with the final states.
pub fn cmd_generate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Outputs> {
    cfg.validate()?;
    let ck = Checkpoint::load(checkpoint)
        .map_err(|e| Error::config(format!("cannot load checkpoint {}: {e}", checkpoint.display())))?;
    let paths = sample_paths(cfg, &ck, cfg.seed)?;
    let dir = prepare_out(cfg)?;
    let samples = dir.join("samples.csv");
    paths.write_csv_file(&samples)?;
    let terminal = dir.join("terminal.csv");
    write_points(&terminal, &paths.terminal())?;
    Ok(Outputs { files: vec![samples, terminal] })
}

fn write_points(path: &Path, points: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..points.cols).map(|k| format!("x{k}")).collect();
    writeln!(f, "{}", header.join(","))?;
    for r in 0..points.rows {
        let row: Vec<String> = points.row_slice(r).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()?;
    Ok(())
}
