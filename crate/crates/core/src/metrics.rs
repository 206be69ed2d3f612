//! Evaluation metrics: drift error, energy distance, CRPS and ECDF gaps.

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::diffgraph::Tensor;
use crate::drift::{DriftModel, Population, PopulationBatch, TrueDrift};
use crate::error::{Error, Result};
use crate::simulate::TrajectoryDataset;

/// Points at which drifts are compared.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub points: Tensor,
}

impl EvalGrid {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.rows == 0 || !points.is_finite() {
            return Err(Error::config("evaluation grid must be non-empty and finite"));
        }
        Ok(EvalGrid { points })
    }

    /// Uniform lattice with `per_dim` points per axis over `[lo, hi]^d`.
    pub fn lattice(lo: f64, hi: f64, per_dim: usize, dim: usize) -> Result<Self> {
        if per_dim < 2 || dim == 0 || !(hi > lo) {
            return Err(Error::config("lattice needs at least two points per axis and hi > lo"));
        }
        let axis: Vec<f64> = (0..per_dim).map(|i| lo + (hi - lo) * i as f64 / (per_dim - 1) as f64).collect();
        let total = per_dim.pow(dim as u32);
        let mut data = Vec::with_capacity(total * dim);
        for idx in 0..total {
            let mut rem = idx;
            let mut point = vec![0.0; dim];
            for k in (0..dim).rev() {
                point[k] = axis[rem % per_dim];
                rem /= per_dim;
            }
            data.extend(point);
        }
        Self::new(Tensor::new(total, dim, data))
    }

    pub fn len(&self) -> usize {
        self.points.rows
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows == 0
    }
}

/// Mean over rows of `‖a − b‖² / d`.
pub fn mean_sq_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.rows == 0 {
        return Err(Error::usage("drift values differ in shape"));
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(sum / (a.rows * a.cols) as f64)
}

/// Drift error of `est` against `truth` on `grid` at time `t`. `pop` is the
/// particle cloud seen by mean-field drifts, both true and learned.
pub fn drift_mse(
    est: &DriftModel,
    truth: &TrueDrift,
    grid: &EvalGrid,
    pop: &Population,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let d = grid.points.cols;
    if d != est.dim() || d != truth.dim() {
        return Err(Error::config("grid, model and true drift dimensions differ"));
    }
    let t = pop.t;
    let times = vec![t; grid.len()];
    let batch = est.kind().uses_population().then(|| {
        PopulationBatch::shared(Tensor::new(pop.len(), pop.dim, pop.points.clone()), grid.len())
    });
    let b_est = est.evaluate(&grid.points, &times, batch.as_ref(), rng)?;
    let b_true = Tensor::new(grid.len(), d, truth.eval_batch(&grid.points.data, pop, t)?);
    mean_sq_error(&b_est, &b_true)
}

/// [`drift_mse`] averaged over the time stamps of `ds`, using each time's
/// particle cloud both as the grid and as the population.
pub fn drift_mse_on_paths(
    est: &DriftModel,
    truth: &TrueDrift,
    ds: &TrajectoryDataset,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..ds.n_times() {
        let cloud = ds.population(j);
        let pop = Population::new(ds.dim(), cloud.data.clone(), ds.times()[j]);
        total += drift_mse(est, truth, &EvalGrid::new(cloud)?, &pop, rng)?;
    }
    Ok(total / ds.n_times() as f64)
}

fn mean_pairwise_distance(a: &Tensor, b: &Tensor) -> f64 {
    let mut total = 0.0;
    for i in 0..a.rows {
        let x = a.row_slice(i);
        let mut row = 0.0;
        for j in 0..b.rows {
            let y = b.row_slice(j);
            row += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        }
        total += row;
    }
    total / (a.rows * b.rows) as f64
}

/// Squared energy distance `2E‖X − Y‖ − E‖X − X′‖ − E‖Y − Y′‖` between two
/// sample sets, with all double sums averaged over `n²` pairs.
pub fn energy_distance_sq(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.rows == 0 || q.rows == 0 {
        return Err(Error::usage("energy distance needs non-empty samples"));
    }
    if p.cols != q.cols {
        return Err(Error::usage("energy distance samples differ in dimension"));
    }
    let cross = mean_pairwise_distance(p, q);
    let within_p = mean_pairwise_distance(p, p);
    let within_q = mean_pairwise_distance(q, q);
    Ok((2.0 * cross - within_p - within_q).max(0.0))
}

/// Continuous ranked probability score of an ensemble forecast, in its energy
/// form `E|Y − x| − ½E|Y − Y′|`.
pub fn crps(ensemble: &[f64], obs: f64) -> Result<f64> {
    if ensemble.is_empty() {
        return Err(Error::usage("CRPS needs a non-empty ensemble"));
    }
    let n = ensemble.len() as f64;
    let spread_obs = ensemble.iter().map(|y| (y - obs).abs()).sum::<f64>() / n;
    let mut sorted = ensemble.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σ_{i,j} |y_i − y_j| = 2 Σ_i (2i − n + 1) y_(i) for sorted samples
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, y)| (2.0 * i as f64 - n + 1.0) * y)
        .sum::<f64>()
        * 2.0;
    Ok(spread_obs - 0.5 * pair_sum / (n * n))
}

/// CRPS per coordinate of a multivariate ensemble (`members × d`), averaged.
pub fn crps_multivariate(ensemble: &Tensor, obs: &[f64]) -> Result<f64> {
    if ensemble.cols != obs.len() {
        return Err(Error::usage("observation dimension does not match ensemble"));
    }
    let mut total = 0.0;
    for k in 0..obs.len() {
        let column: Vec<f64> = (0..ensemble.rows).map(|r| ensemble.get(r, k)).collect();
        total += crps(&column, obs[k])?;
    }
    Ok(total / obs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfDistances {
    pub mean: f64,
    pub p75: f64,
    pub p90: f64,
    pub ks: f64,
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Gaps `|F_A − F_B|` between the two empirical CDFs at every pooled sample
/// point, summarized by their mean, 75th and 90th percentiles and maximum.
pub fn ecdf_distances(a: &[f64], b: &[f64]) -> Result<EcdfDistances> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("ECDF distances need non-empty samples"));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = sa.iter().chain(&sb).map(|&x| (ecdf(&sa, x) - ecdf(&sb, x)).abs()).collect();
    gaps.sort_by(f64::total_cmp);
    Ok(EcdfDistances {
        mean: gaps.iter().sum::<f64>() / gaps.len() as f64,
        p75: percentile(&gaps, 0.75),
        p90: percentile(&gaps, 0.90),
        ks: *gaps.last().unwrap(),
    })
}

/// One row of a results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub const RESULTS_HEADER: &str = "experiment,metric,value,seed";

pub fn write_results<W: Write>(mut out: W, records: &[MetricRecord], header: bool) -> Result<()> {
    if header {
        writeln!(out, "{RESULTS_HEADER}")?;
    }
    for r in records {
        if r.experiment.contains(',') || r.metric.contains(',') {
            return Err(Error::usage("experiment and metric names may not contain commas"));
        }
        writeln!(out, "{},{},{:.16e},{}", r.experiment, r.metric, r.value, r.seed)?;
    }
    Ok(())
}

/// Appends to `path`, writing the header when the file is new or empty.
pub fn append_results(path: impl AsRef<Path>, records: &[MetricRecord]) -> Result<()> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    write_results(file, records, fresh)
}

pub fn read_results(text: &str) -> Result<Vec<MetricRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(Error::Parse { line: 1, message: format!("expected header '{RESULTS_HEADER}'") }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        out.push(MetricRecord {
            experiment: f[0].to_string(),
            metric: f[1].to_string(),
            value: f[2].parse().map_err(|_| bad("invalid value"))?,
            seed: f[3].parse().map_err(|_| bad("invalid seed"))?,
        });
    }
    Ok(out)
}
