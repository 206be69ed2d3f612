use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Multiplicative learning-rate decay applied once per step.
    pub gamma: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-4, weight_decay: 0.01, gamma: 0.9998 }
    }
}

/// AdamW with bias correction and decoupled weight decay. Minimizes.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize) -> Self {
        AdamW { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Learning rate used by the next step: `lr · γ^(steps taken)`.
    pub fn current_lr(&self) -> f64 {
        self.config.lr * self.config.gamma.powf(self.step as f64)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::usage(format!(
                "AdamW length mismatch: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient at coordinate {i} on step {}",
                self.step + 1
            )));
        }
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * c.weight_decay * params[i];
            let denom = v_hat.sqrt() + c.eps;
            if denom > 0.0 {
                params[i] -= lr * m_hat / denom;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(opt.steps_taken(), 5);
    }

    #[test]
    fn degenerate_moments() {
        let cfg = AdamWConfig { lr: 0.1, beta1: 0.0, beta2: 0.0, eps: 0.0, weight_decay: 0.0, gamma: 1.0 };
        let mut opt = AdamW::new(cfg, 1);
        let mut p = vec![1.0f64];
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    /// Hand-coded copy of the update rule on f(p) = p².
    #[test]
    fn quadratic_descends_monotonically() {
        let cfg = AdamWConfig { lr: 1e-2, ..Default::default() };
        let mut opt = AdamW::new(cfg.clone(), 1);
        let mut p = vec![1.0f64];
        let (mut m, mut v, mut q) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=10 {
            let prev = p[0].abs();
            let grad = [2.0 * p[0]];
            opt.step(&mut p, &grad).unwrap();
            assert!(p[0].abs() < prev, "step {t}");

            let g = 2.0 * q;
            let lr = cfg.lr * cfg.gamma.powi(t - 1);
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            q -= lr * cfg.weight_decay * q;
            q -= lr * mh / (vh.sqrt() + cfg.eps);
            assert!((p[0] - q).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut opt = AdamW::new(AdamWConfig::default(), 2);
        let mut p = vec![0.0; 2];
        assert!(matches!(opt.step(&mut p, &[0.0, f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn learning_rate_decays_geometrically() {
        let mut opt = AdamW::new(AdamWConfig { lr: 1.0, gamma: 0.5, ..Default::default() }, 1);
        assert_eq!(opt.current_lr(), 1.0);
        opt.step(&mut [0.0], &[1.0]).unwrap();
        opt.step(&mut [0.0], &[1.0]).unwrap();
        assert_eq!(opt.current_lr(), 0.25);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![30.0, 40.0];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 50.0);
        assert!((g[0] - 6.0).abs() < 1e-12 && (g[1] - 8.0).abs() < 1e-12);
    }
}
