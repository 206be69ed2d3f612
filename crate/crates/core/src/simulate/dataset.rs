use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::diffgraph::Tensor;
use crate::error::{Error, Result};

/// Particle paths on a shared time grid, `N × K × d`.
///
/// When a mask is present, `mask[i·K + j]` says whether particle `i` was
/// observed at `times[j]`; unobserved entries hold zero. Every particle is
/// observed at the first and last time.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    times: Vec<f64>,
    dim: usize,
    n_particles: usize,
    states: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl TrajectoryDataset {
    pub fn new(
        times: Vec<f64>,
        dim: usize,
        n_particles: usize,
        mut states: Vec<f64>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        let k = times.len();
        if k == 0 || dim == 0 || n_particles == 0 {
            return Err(Error::config("dataset needs at least one particle, time and dimension"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("dataset times must be finite and strictly increasing"));
        }
        if states.len() != n_particles * k * dim {
            return Err(Error::config(format!(
                "expected {} state values, got {}",
                n_particles * k * dim,
                states.len()
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n_particles * k {
                return Err(Error::config("mask length does not match N × K"));
            }
            for i in 0..n_particles {
                if !m[i * k] || !m[i * k + k - 1] {
                    return Err(Error::config(format!(
                        "particle {i} must be observed at the first and last time"
                    )));
                }
            }
        }
        for i in 0..n_particles {
            for j in 0..k {
                let seen = mask.as_ref().is_none_or(|m| m[i * k + j]);
                let row = &mut states[(i * k + j) * dim..(i * k + j + 1) * dim];
                if !seen {
                    row.iter_mut().for_each(|v| *v = 0.0);
                } else if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!(
                        "non-finite state for particle {i} at t = {}",
                        times[j]
                    )));
                }
            }
        }
        let mask = mask.filter(|m| !m.iter().all(|&b| b));
        Ok(TrajectoryDataset { times, dim, n_particles, states, mask })
    }

    /// Builds a fully observed dataset from per-step snapshots (`K` tensors of `N × d`).
    pub fn from_snapshots(times: Vec<f64>, snapshots: &[Tensor]) -> Result<Self> {
        if snapshots.len() != times.len() || snapshots.is_empty() {
            return Err(Error::config("one snapshot per time is required"));
        }
        let (n, d) = snapshots[0].shape();
        let k = times.len();
        let mut states = vec![0.0; n * k * d];
        for (j, snap) in snapshots.iter().enumerate() {
            if snap.shape() != (n, d) {
                return Err(Error::config("snapshots differ in shape"));
            }
            for i in 0..n {
                states[(i * k + j) * d..(i * k + j + 1) * d].copy_from_slice(snap.row_slice(i));
            }
        }
        Self::new(times, d, n, states, None)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_regular(&self) -> bool {
        self.mask.is_none()
    }

    pub fn state(&self, i: usize, j: usize) -> &[f64] {
        let k = self.n_times();
        &self.states[(i * k + j) * self.dim..(i * k + j + 1) * self.dim]
    }

    pub(crate) fn state_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = self.n_times();
        &mut self.states[(i * k + j) * self.dim..(i * k + j + 1) * self.dim]
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i * self.n_times() + j])
    }

    /// Time indices at which particle `i` was observed.
    pub fn observed_indices(&self, i: usize) -> Vec<usize> {
        (0..self.n_times()).filter(|&j| self.is_observed(i, j)).collect()
    }

    /// Number of observed (particle, time) pairs.
    pub fn observation_count(&self) -> usize {
        self.mask.as_ref().map_or(self.n_particles * self.n_times(), |m| m.iter().filter(|&&b| b).count())
    }

    /// Observed particles at time index `j`, as an `n_j × d` tensor.
    pub fn population(&self, j: usize) -> Tensor {
        let mut data = Vec::with_capacity(self.n_particles * self.dim);
        let mut rows = 0;
        for i in 0..self.n_particles {
            if self.is_observed(i, j) {
                data.extend_from_slice(self.state(i, j));
                rows += 1;
            }
        }
        Tensor::new(rows, self.dim, data)
    }

    pub fn initial(&self) -> Tensor {
        self.population(0)
    }

    pub fn terminal(&self) -> Tensor {
        self.population(self.n_times() - 1)
    }

    /// Path of particle `i` as a `K × d` tensor (zeros where unobserved).
    pub fn path(&self, i: usize) -> Tensor {
        let k = self.n_times();
        Tensor::new(k, self.dim, self.states[i * k * self.dim..(i + 1) * k * self.dim].to_vec())
    }

    pub fn select_particles(&self, ids: &[usize]) -> Result<Self> {
        let k = self.n_times();
        let mut states = Vec::with_capacity(ids.len() * k * self.dim);
        let mut mask = self.mask.as_ref().map(|_| Vec::with_capacity(ids.len() * k));
        for &i in ids {
            if i >= self.n_particles {
                return Err(Error::usage(format!("particle {i} out of range")));
            }
            states.extend_from_slice(&self.states[i * k * self.dim..(i + 1) * k * self.dim]);
            if let (Some(out), Some(m)) = (mask.as_mut(), self.mask.as_ref()) {
                out.extend_from_slice(&m[i * k..(i + 1) * k]);
            }
        }
        Self::new(self.times.clone(), self.dim, ids.len(), states, mask)
    }

    /// Same paths observed only where `mask` is set.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(self.times.clone(), self.dim, self.n_particles, self.states.clone(), Some(mask))
    }

    /// One row per observed (particle, time). Times that no particle observes
    /// have no row and are absent after reading the file back.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        write!(w, "particle_id,t")?;
        for k in 0..self.dim {
            write!(w, ",x{k}")?;
        }
        writeln!(w)?;
        for i in 0..self.n_particles {
            for j in 0..self.n_times() {
                if !self.is_observed(i, j) {
                    continue;
                }
                write!(w, "{i},{:.16e}", self.times[j])?;
                for v in self.state(i, j) {
                    write!(w, ",{v:.16e}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => line?,
            None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
        };
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.len() < 3 || cols[0] != "particle_id" || cols[1] != "t" {
            return Err(Error::Parse {
                line: 1,
                message: "header must be particle_id,t,x0,...".into(),
            });
        }
        for (k, c) in cols[2..].iter().enumerate() {
            if *c != format!("x{k}") {
                return Err(Error::Parse { line: 1, message: format!("unexpected column '{c}'") });
            }
        }
        let dim = cols.len() - 2;
        let mut rows: Vec<(u64, f64, Vec<f64>, usize)> = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {} fields, found {}", dim + 2, fields.len()),
                });
            }
            let bad = |what: &str| Error::Parse { line: lineno, message: format!("invalid {what}") };
            let id: u64 = fields[0].parse().map_err(|_| bad("particle_id"))?;
            let t: f64 = fields[1].parse().map_err(|_| bad("time"))?;
            let x = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad("state value")))
                .collect::<Result<Vec<_>>>()?;
            if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite value"));
            }
            rows.push((id, t, x, lineno));
        }
        if rows.is_empty() {
            return Err(Error::Parse { line: 2, message: "no observations".into() });
        }
        let mut ids: Vec<u64> = rows.iter().map(|r| r.0).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut times: Vec<f64> = rows.iter().map(|r| r.1).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let (n, k) = (ids.len(), times.len());
        let mut states = vec![0.0; n * k * dim];
        let mut mask = vec![false; n * k];
        for (id, t, x, lineno) in rows {
            let i = ids.binary_search(&id).expect("id collected above");
            let j = times.binary_search_by(|v| v.total_cmp(&t)).expect("time collected above");
            if mask[i * k + j] {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("duplicate observation of particle {id} at t = {t}"),
                });
            }
            mask[i * k + j] = true;
            states[(i * k + j) * dim..(i * k + j + 1) * dim].copy_from_slice(&x);
        }
        Self::new(times, dim, n, states, Some(mask))
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(File::open(path)?)
    }
}
