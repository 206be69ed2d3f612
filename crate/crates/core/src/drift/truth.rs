use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The synthetic benchmark systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Kuramoto,
    FitzHughNagumo,
    OpinionDynamics,
    MeanFieldAtlas,
    Ou,
    Circle,
    JumpOu,
}

impl System {
    pub const ALL: [System; 7] = [
        System::Kuramoto,
        System::FitzHughNagumo,
        System::OpinionDynamics,
        System::MeanFieldAtlas,
        System::Ou,
        System::Circle,
        System::JumpOu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            System::Kuramoto => "kuramoto",
            System::FitzHughNagumo => "fitzhugh_nagumo",
            System::OpinionDynamics => "opinion_dynamics",
            System::MeanFieldAtlas => "mean_field_atlas",
            System::Ou => "ou",
            System::Circle => "circle",
            System::JumpOu => "jump_ou",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            System::MeanFieldAtlas => 1,
            _ => 2,
        }
    }

    /// Whether the drift depends on the population.
    pub fn is_mean_field(self) -> bool {
        matches!(
            self,
            System::Kuramoto | System::FitzHughNagumo | System::OpinionDynamics | System::MeanFieldAtlas
        )
    }
}

impl std::str::FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == key)
            .ok_or_else(|| Error::config(format!("unknown system '{s}'")))
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Particle cloud representing the time-`t` marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub dim: usize,
    /// Row-major `n × dim`.
    pub points: Vec<f64>,
    pub t: f64,
}

impl Population {
    pub fn new(dim: usize, points: Vec<f64>, t: f64) -> Self {
        assert_eq!(points.len() % dim, 0, "population length is not a multiple of dim");
        Population { dim, points, t }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }
}

/// Closed-form drifts of the synthetic systems.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum TrueDrift {
    /// `sin(x) + K/N Σ sin(y − x)` per coordinate.
    Kuramoto { coupling: f64 },
    /// Voltage/recovery pair with a mean-field pull on the voltage.
    FitzHughNagumo { a: f64, b: f64, c: f64, d: f64, lambda: f64 },
    /// `E[ψ(‖x − y‖)(x − y)]`, `ψ(r) = θ₁ exp(−0.01 / (1 − (r − θ₂)²))`.
    OpinionDynamics { theta1: f64, theta2: f64 },
    /// `γ(u) = 1 − u e^{2u}` with `u` the fraction of the population below `x`.
    MeanFieldAtlas,
    Ou { kappa: Vec<f64> },
    /// `[−x₁ − 2x₂, −x₂ + 2x₁]`.
    Circle,
    /// OU part of the jump process; jumps are injected by the simulator.
    JumpOu { kappa: Vec<f64> },
}

impl TrueDrift {
    pub fn for_system(system: System) -> Self {
        match system {
            System::Kuramoto => TrueDrift::Kuramoto { coupling: 2.0 },
            System::FitzHughNagumo => {
                TrueDrift::FitzHughNagumo { a: 0.2, b: 0.8, c: 1.0, d: 0.7, lambda: 0.4 }
            }
            System::OpinionDynamics => TrueDrift::OpinionDynamics { theta1: 1.0, theta2: 2.5 },
            System::MeanFieldAtlas => TrueDrift::MeanFieldAtlas,
            System::Ou => TrueDrift::Ou { kappa: vec![3.0, 2.0] },
            System::Circle => TrueDrift::Circle,
            System::JumpOu => TrueDrift::JumpOu { kappa: vec![1.0, 1.0] },
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TrueDrift::MeanFieldAtlas => 1,
            TrueDrift::Ou { kappa } | TrueDrift::JumpOu { kappa } => kappa.len(),
            _ => 2,
        }
    }

    pub fn needs_population(&self) -> bool {
        matches!(
            self,
            TrueDrift::Kuramoto { .. }
                | TrueDrift::FitzHughNagumo { .. }
                | TrueDrift::OpinionDynamics { .. }
                | TrueDrift::MeanFieldAtlas
        )
    }

    /// Drift at `x` given the population cloud `pop` at time `t`.
    pub fn eval(&self, x: &[f64], pop: &Population, t: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::config(format!("true drift expects dimension {d}, got {}", x.len())));
        }
        if self.needs_population() {
            if pop.is_empty() {
                return Err(Error::usage("mean-field drift evaluated with an empty population"));
            }
            if pop.dim != d {
                return Err(Error::config("population dimension does not match drift"));
            }
        }
        let n = pop.len() as f64;
        Ok(match self {
            TrueDrift::Kuramoto { coupling } => (0..d)
                .map(|k| {
                    let pull: f64 = pop.iter().map(|y| (y[k] - x[k]).sin()).sum();
                    x[k].sin() + coupling / n * pull
                })
                .collect(),
            TrueDrift::FitzHughNagumo { a, b, c, d: offset, lambda } => {
                let mean_v = pop.iter().map(|y| y[0]).sum::<f64>() / n;
                let (v, w) = (x[0], x[1]);
                let i_ext = 0.1 * (10.0 * t).sin();
                vec![
                    a * v * (v - lambda) * (1.0 - v) - w + i_ext + (v - mean_v),
                    -b * w + c * v + offset,
                ]
            }
            TrueDrift::OpinionDynamics { theta1, theta2 } => {
                let mut out = vec![0.0; d];
                for y in pop.iter() {
                    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                    let r = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let w = opinion_kernel(r, *theta1, *theta2);
                    for k in 0..d {
                        out[k] += w * diff[k];
                    }
                }
                out.iter().map(|v| v / n).collect()
            }
            TrueDrift::MeanFieldAtlas => {
                let below = pop.iter().filter(|y| x[0] - y[0] > 0.0).count() as f64;
                vec![atlas_rate(below / n)]
            }
            TrueDrift::Ou { kappa } | TrueDrift::JumpOu { kappa } => {
                x.iter().zip(kappa).map(|(xi, k)| -k * xi).collect()
            }
            TrueDrift::Circle => vec![-x[0] - 2.0 * x[1], -x[1] + 2.0 * x[0]],
        })
    }

    /// Evaluates every row of `xs` (`m × d`, row-major) against the same population.
    pub fn eval_batch(&self, xs: &[f64], pop: &Population, t: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = Vec::with_capacity(xs.len());
        for x in xs.chunks_exact(d) {
            out.extend(self.eval(x, pop, t)?);
        }
        Ok(out)
    }
}

/// `θ₁ exp(−0.01 / (1 − (r − θ₂)²))`, continuously extended by 0 outside its support.
pub fn opinion_kernel(r: f64, theta1: f64, theta2: f64) -> f64 {
    let gap = 1.0 - (r - theta2).powi(2);
    if gap <= 0.0 {
        0.0
    } else {
        theta1 * (-0.01 / gap).exp()
    }
}

pub fn atlas_rate(u: f64) -> f64 {
    1.0 - u * (2.0 * u).exp()
}
