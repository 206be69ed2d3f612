use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore};
use rand_distr::{Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::diffgraph::Tensor;
use crate::drift::{System, TrueDrift};
use crate::error::{Error, Result};
use crate::rng::stream;

use super::euler::{simulate_snapshots, Jump};
use super::TrajectoryDataset;

/// Synthetic dataset recipe. [`GeneratorSpec::for_system`] gives the standard
/// settings of each benchmark system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub system: System,
    pub sigma: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_particles: usize,
    /// Expected number of irregular observations per particle.
    pub n_irregular: usize,
    /// Subsample each particle at random times instead of the full grid.
    pub irregular: bool,
    /// Standard deviation of additive Gaussian observation noise.
    pub obs_noise: f64,
    /// Number of common jumps (jump OU only).
    pub jumps: usize,
    /// Initial law `N(0, init_std² I)`.
    pub init_std: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn for_system(system: System) -> Self {
        let (sigma, t_end, dt) = match system {
            System::FitzHughNagumo => (0.3, 5.0, 0.05),
            System::OpinionDynamics => (0.5, 100.0, 1.0),
            _ => (1.0, 5.0, 0.05),
        };
        let (n_particles, n_irregular, jumps) = match system {
            System::JumpOu => (100, 0, 1),
            _ => (20, 20, 0),
        };
        GeneratorSpec {
            system,
            sigma,
            t_end,
            dt,
            n_particles,
            n_irregular,
            irregular: false,
            obs_noise: 0.0,
            jumps,
            init_std: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(self.t_end > 0.0) || !(self.dt > 0.0) || self.dt > self.t_end {
            return Err(Error::config("generator needs σ ≥ 0 and 0 < Δt ≤ T"));
        }
        if self.n_particles == 0 {
            return Err(Error::config("generator needs at least one particle"));
        }
        if !(self.obs_noise >= 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::config("noise levels must be non-negative"));
        }
        if self.irregular && self.n_irregular == 0 {
            return Err(Error::config("irregular sampling needs a positive observation count"));
        }
        if self.jumps > 0 && self.system != System::JumpOu {
            return Err(Error::config("jumps are only defined for the jump OU system"));
        }
        if self.jumps >= self.grid().len() {
            return Err(Error::config("more jumps than simulation steps"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let k = (self.t_end / self.dt).round() as usize;
        (0..=k).map(|j| j as f64 * self.dt).collect()
    }

    /// Per-coordinate noise scale of the simulation. The recovery variable of
    /// FitzHugh-Nagumo is noiseless.
    pub fn noise_scales(&self) -> Vec<f64> {
        match self.system {
            System::FitzHughNagumo => vec![self.sigma, 0.0],
            s => vec![self.sigma; s.dim()],
        }
    }

    pub fn drift(&self) -> TrueDrift {
        TrueDrift::for_system(self.system)
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Training data: noisy and, when requested, irregularly observed.
    pub observed: TrajectoryDataset,
    /// The simulated paths behind `observed`, on the full grid without noise.
    pub clean: TrajectoryDataset,
    /// An independent run with the same jump schedule.
    pub held_out: TrajectoryDataset,
    pub jumps: Vec<Jump>,
}

fn gaussian_cloud(n: usize, d: usize, std: f64, rng: &mut dyn RngCore) -> Tensor {
    let data = (0..n * d).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(n, d, data)
}

pub fn generate(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let drift = spec.drift();
    let d = spec.system.dim();
    let grid = spec.grid();
    let sigma = spec.noise_scales();
    let jumps = draw_jumps(spec.jumps, grid.len() - 1, &mut stream(spec.seed, "jumps", &[]));

    let run = |label: &str| -> Result<TrajectoryDataset> {
        let init = gaussian_cloud(spec.n_particles, d, spec.init_std, &mut stream(spec.seed, label, &[0]));
        let mut rng = stream(spec.seed, label, &[1]);
        let snaps = simulate_snapshots(&drift, &init, &grid, &sigma, &jumps, &mut rng)?;
        TrajectoryDataset::from_snapshots(grid.clone(), &snaps)
    };
    let clean = run("train")?;
    let held_out = run("held_out")?;

    let mut observed = clean.clone();
    if spec.obs_noise > 0.0 {
        let mut rng = stream(spec.seed, "obs_noise", &[]);
        for i in 0..observed.n_particles() {
            for j in 0..observed.n_times() {
                for v in observed.state_mut(i, j) {
                    *v += spec.obs_noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }
    if spec.irregular {
        let mut rng = stream(spec.seed, "irregular", &[]);
        let mask = irregular_mask(spec.n_particles, &grid, spec.n_irregular, &mut rng);
        observed = observed.with_mask(mask)?;
    }
    Ok(Generated { observed, clean, held_out, jumps })
}

/// `count` jumps on distinct transitions out of `0..steps`, sizes `exp(U(2, 3))`.
pub fn draw_jumps(count: usize, steps: usize, rng: &mut dyn RngCore) -> Vec<Jump> {
    if count == 0 {
        return Vec::new();
    }
    let mut picked = sample_indices(rng, steps, count).into_vec();
    picked.sort_unstable();
    let unif = Uniform::new(2.0, 3.0).expect("valid range");
    picked
        .into_iter()
        .map(|step| Jump { step, size: rng.sample::<f64, _>(unif).exp() })
        .collect()
}

/// Per-particle observation mask from exponential inter-arrival times with
/// mean `T / n_obs`, snapped to the nearest grid point. The first and last
/// grid points are always kept.
pub fn irregular_mask(n_particles: usize, grid: &[f64], n_obs: usize, rng: &mut dyn RngCore) -> Vec<bool> {
    let k = grid.len();
    let (t0, t1) = (grid[0], grid[k - 1]);
    let step = (t1 - t0) / (k - 1).max(1) as f64;
    let gaps = Exp::new(n_obs as f64 / (t1 - t0)).expect("positive rate");
    let mut mask = vec![false; n_particles * k];
    for i in 0..n_particles {
        let row = &mut mask[i * k..(i + 1) * k];
        row[0] = true;
        row[k - 1] = true;
        let mut t = t0 + rng.sample::<f64, _>(gaps);
        while t < t1 {
            let j = (((t - t0) / step).round() as usize).min(k - 1);
            row[j] = true;
            t += rng.sample::<f64, _>(gaps);
        }
    }
    mask
}

/// Target laws for the generative transport task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Unit-variance mixture of eight Gaussians on the circle of radius 2,
    /// tiled over pairs of coordinates in even dimension.
    EightGaussians,
}

pub fn eight_gaussian_means() -> [[f64; 2]; 8] {
    let r = std::f64::consts::SQRT_2;
    [
        [0.0, 2.0],
        [0.0, -2.0],
        [2.0, 0.0],
        [-2.0, 0.0],
        [r, r],
        [r, -r],
        [-r, r],
        [-r, -r],
    ]
}

pub fn sample_eight_gaussians(n: usize, dim: usize, rng: &mut dyn RngCore) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::config("eight-Gaussian target needs an even dimension"));
    }
    let means = eight_gaussian_means();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = rng.random_range(0..8);
        for k in 0..dim {
            data.push(means[c][k % 2] + rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(Tensor::new(n, dim, data))
}

/// Transport problem from `N(0, I)` at time 0 to a target law at `t_end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerativeSpec {
    pub target: Target,
    pub dim: usize,
    pub n_particles: usize,
    /// Independent batches of `n_particles` pairs in the training set.
    pub batches: usize,
    pub t_end: f64,
    pub dt: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for GenerativeSpec {
    fn default() -> Self {
        GenerativeSpec {
            target: Target::EightGaussians,
            dim: 2,
            n_particles: 100,
            batches: 1,
            t_end: 0.1,
            dt: 0.002,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl GenerativeSpec {
    /// Sub-intervals of the bridge grid between the two endpoints.
    pub fn substeps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeData {
    /// Two-time dataset pairing initial draws with target draws.
    pub train: TrajectoryDataset,
    /// Fresh initial draws to push through a trained model.
    pub held_out_initial: Tensor,
    pub held_out_target: Tensor,
}

pub fn generative_dataset(spec: &GenerativeSpec) -> Result<GenerativeData> {
    if !(spec.t_end > 0.0) || spec.n_particles == 0 || spec.batches == 0 {
        return Err(Error::config("generative task needs T > 0, particles and batches"));
    }
    let (n, d) = (spec.n_particles, spec.dim);
    let sample = |label: &str, n: usize| -> Result<Tensor> {
        let mut rng = stream(spec.seed, label, &[]);
        match spec.target {
            Target::EightGaussians => sample_eight_gaussians(n, d, &mut rng),
        }
    };
    let pool = n * spec.batches;
    let start = gaussian_cloud(pool, d, 1.0, &mut stream(spec.seed, "initial", &[]));
    let end = sample("target", pool)?;
    let train = TrajectoryDataset::from_snapshots(vec![0.0, spec.t_end], &[start, end])?;
    Ok(GenerativeData {
        train,
        held_out_initial: gaussian_cloud(n, d, 1.0, &mut stream(spec.seed, "initial_held_out", &[])),
        held_out_target: sample("target_held_out", n)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_settings() {
        let k = GeneratorSpec::for_system(System::Kuramoto);
        assert_eq!((k.sigma, k.t_end, k.dt, k.n_particles, k.n_irregular), (1.0, 5.0, 0.05, 20, 20));
        let f = GeneratorSpec::for_system(System::FitzHughNagumo);
        assert_eq!(f.sigma, 0.3);
        assert_eq!(f.noise_scales(), vec![0.3, 0.0]);
        let o = GeneratorSpec::for_system(System::OpinionDynamics);
        assert_eq!((o.sigma, o.t_end, o.dt), (0.5, 100.0, 1.0));
        assert_eq!(o.grid().len(), 101);
        assert_eq!(GeneratorSpec::for_system(System::JumpOu).n_particles, 100);
    }

    #[test]
    fn kuramoto_shape() {
        let ds = generate(&GeneratorSpec::for_system(System::Kuramoto)).unwrap().observed;
        assert_eq!((ds.n_particles(), ds.n_times(), ds.dim()), (20, 101, 2));
    }

    #[test]
    fn irregular_mask_keeps_endpoints() {
        let grid: Vec<f64> = (0..101).map(|j| j as f64 * 0.05).collect();
        let mut rng = stream(3, "t", &[]);
        let mask = irregular_mask(50, &grid, 20, &mut rng);
        let mut total = 0;
        for i in 0..50 {
            assert!(mask[i * 101] && mask[i * 101 + 100]);
            total += mask[i * 101..(i + 1) * 101].iter().filter(|&&b| b).count();
        }
        let mean = total as f64 / 50.0;
        assert!((15.0..=24.0).contains(&mean), "{mean}");
    }

    #[test]
    fn jumps_on_distinct_steps_with_sizes_in_range() {
        let mut rng = stream(1, "j", &[]);
        let jumps = draw_jumps(4, 100, &mut rng);
        assert_eq!(jumps.len(), 4);
        assert!(jumps.windows(2).all(|w| w[0].step < w[1].step));
        let lo = 2f64.exp();
        let hi = 3f64.exp();
        assert!(jumps.iter().all(|j| j.size >= lo && j.size <= hi));
    }

    #[test]
    fn jumps_rejected_for_other_systems() {
        let mut spec = GeneratorSpec::for_system(System::Ou);
        spec.jumps = 1;
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn eight_gaussian_target() {
        let mut rng = stream(0, "g", &[]);
        let x = sample_eight_gaussians(4000, 2, &mut rng).unwrap();
        let radius = (0..x.rows).map(|r| x.get(r, 0).hypot(x.get(r, 1))).sum::<f64>() / x.rows as f64;
        assert!(radius > 2.0 && radius < 2.6, "{radius}");
        assert!(sample_eight_gaussians(1, 3, &mut rng).is_err());
        let means = eight_gaussian_means();
        for (a, m) in means.iter().enumerate() {
            assert!((m[0].hypot(m[1]) - 2.0).abs() < 1e-12);
            assert!(means[a + 1..].iter().all(|o| o != m));
        }
    }

    #[test]
    fn generative_dataset_layout() {
        let data = generative_dataset(&GenerativeSpec::default()).unwrap();
        assert_eq!(data.train.times(), &[0.0, 0.1]);
        assert_eq!(data.train.n_particles(), 100);
        assert_eq!(data.held_out_target.shape(), (100, 2));
        assert_eq!(GenerativeSpec::default().substeps(), 50);
        let pooled = generative_dataset(&GenerativeSpec { batches: 3, ..GenerativeSpec::default() }).unwrap();
        assert_eq!(pooled.train.n_particles(), 300);
        assert_eq!(pooled.held_out_initial.shape(), (100, 2));
    }
}
