use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::diffgraph::Tensor;
use crate::error::{Error, Result};

/// Brownian bridge pinned at `start` at `t0` and `end` at `t1`, sampled on
/// `inner + 1` equally spaced points.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSpec {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub t0: f64,
    pub t1: f64,
    pub inner: usize,
    pub sigma: f64,
}

impl BridgeSpec {
    pub fn grid(&self) -> Vec<f64> {
        let h = (self.t1 - self.t0) / self.inner as f64;
        (0..=self.inner)
            .map(|j| if j == self.inner { self.t1 } else { self.t0 + j as f64 * h })
            .collect()
    }
}

/// Returns an `(inner + 1) × d` path.
pub fn sample_bridge(spec: &BridgeSpec, rng: &mut dyn RngCore) -> Result<Tensor> {
    if spec.inner == 0 {
        return Err(Error::usage("bridge needs at least one sub-interval"));
    }
    if !(spec.t1 > spec.t0) {
        return Err(Error::usage("bridge interval must have positive length"));
    }
    if spec.start.len() != spec.end.len() {
        return Err(Error::config("bridge endpoints differ in dimension"));
    }
    let grid = spec.grid();
    let d = spec.start.len();
    let mut out = vec![0.0; grid.len() * d];
    fill_bridge(&spec.start, &spec.end, &grid, spec.sigma, rng, &mut out);
    Ok(Tensor::new(grid.len(), d, out))
}

/// Writes a bridge on the increasing `grid` into `out` (`grid.len() × d`,
/// row-major) by sequential conditional Gaussians. The first and last rows are
/// the endpoints exactly.
pub fn fill_bridge(
    start: &[f64],
    end: &[f64],
    grid: &[f64],
    sigma: f64,
    rng: &mut dyn RngCore,
    out: &mut [f64],
) {
    let d = start.len();
    let n = grid.len();
    let t1 = grid[n - 1];
    out[..d].copy_from_slice(start);
    for j in 1..n - 1 {
        let (s, u) = (grid[j - 1], grid[j]);
        let frac = (u - s) / (t1 - s);
        let sd = sigma * ((u - s) * (t1 - u) / (t1 - s)).sqrt();
        for k in 0..d {
            let prev = out[(j - 1) * d + k];
            let z: f64 = rng.sample(StandardNormal);
            out[j * d + k] = prev + frac * (end[k] - prev) + sd * z;
        }
    }
    out[(n - 1) * d..].copy_from_slice(end);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(sigma: f64) -> BridgeSpec {
        BridgeSpec { start: vec![1.0, -1.0], end: vec![3.0, 0.0], t0: 0.5, t1: 1.5, inner: 4, sigma }
    }

    #[test]
    fn endpoints_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = sample_bridge(&spec(2.0), &mut rng).unwrap();
        assert_eq!(p.row_slice(0), &[1.0, -1.0]);
        assert_eq!(p.row_slice(4), &[3.0, 0.0]);
    }

    #[test]
    fn zero_noise_is_linear_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = sample_bridge(&spec(0.0), &mut rng).unwrap();
        for j in 0..=4 {
            let w = j as f64 / 4.0;
            assert!((p.get(j, 0) - (1.0 + 2.0 * w)).abs() < 1e-14);
            assert!((p.get(j, 1) - (-1.0 + w)).abs() < 1e-14);
        }
    }

    #[test]
    fn invalid_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = spec(1.0);
        s.inner = 0;
        assert!(sample_bridge(&s, &mut rng).is_err());
        let mut s = spec(1.0);
        s.t1 = s.t0;
        assert!(sample_bridge(&s, &mut rng).is_err());
    }
}
