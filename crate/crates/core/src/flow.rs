//! Time-conditioned density models `p̂_t(x)` with exact log-density and
//! reparameterized sampling.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{Activation, Graph, Mlp, NodeId, ParamLayout, Tensor};
use crate::error::{Error, Result};

/// Raw scale outputs beyond this magnitude are treated as a training blow-up.
pub const SCALE_OVERFLOW: f64 = 20.0;
/// Scale outputs are clamped to `±SCALE_CLAMP` before exponentiation.
pub const SCALE_CLAMP: f64 = 10.0;

/// A density over `R^d` indexed by time.
pub trait MarginalDensity {
    fn dim(&self) -> usize;

    /// Log-density of each row of `x` (`m × d`) at the matching time; returns `m × 1`.
    fn log_prob(&self, g: &mut Graph, params: &[f64], x: NodeId, times: &[f64]) -> Result<NodeId>;

    /// One reparameterized draw per entry of `times`; returns `m × d`.
    fn sample(
        &self,
        g: &mut Graph,
        params: &[f64],
        times: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<NodeId>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSpec {
    pub layers: usize,
    pub hidden: Vec<usize>,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec { layers: 4, hidden: vec![64, 64] }
    }
}

#[derive(Clone, Debug)]
struct CouplingLayer {
    /// Coordinates passed through unchanged and fed to the conditioners.
    cond: Vec<usize>,
    /// Coordinates transformed affinely.
    trans: Vec<usize>,
    /// Column order that undoes `[cond, trans]` concatenation.
    unpermute: Vec<usize>,
    scale_net: Mlp,
    shift_net: Mlp,
}

/// Stack of affine coupling layers over a standard-normal base.
///
/// Data-to-latent direction of one layer: `z_u = x_u · exp(s(x_c, t)) + m(x_c, t)`,
/// `z_c = x_c`, so its log-determinant is the sum of `s` over the transformed
/// coordinates. Even layers condition on the first half of the coordinates and
/// odd layers on the second half. For `d = 1` every layer conditions on time only.
#[derive(Clone, Debug)]
pub struct CouplingFlow {
    dim: usize,
    layers: Vec<CouplingLayer>,
}

impl CouplingFlow {
    pub fn new(dim: usize, spec: &FlowSpec, layout: &mut ParamLayout) -> Result<Self> {
        if dim == 0 || spec.layers == 0 {
            return Err(Error::config("flow needs dim ≥ 1 and at least one layer"));
        }
        if dim >= 2 && spec.layers < 2 {
            return Err(Error::config("flow with d ≥ 2 needs at least two coupling layers"));
        }
        let half = dim / 2;
        let mut layers = Vec::with_capacity(spec.layers);
        for l in 0..spec.layers {
            let (cond, trans): (Vec<usize>, Vec<usize>) = if dim == 1 {
                (vec![], vec![0])
            } else if l % 2 == 0 {
                ((0..half).collect(), (half..dim).collect())
            } else {
                ((half..dim).collect(), (0..half).collect())
            };
            let order: Vec<usize> = cond.iter().chain(&trans).copied().collect();
            let mut unpermute = vec![0; dim];
            for (pos, &c) in order.iter().enumerate() {
                unpermute[c] = pos;
            }
            let mut widths = vec![cond.len() + 1];
            widths.extend(&spec.hidden);
            widths.push(trans.len());
            let scale_net = Mlp::new(&widths, Activation::Tanh, layout)?;
            let shift_net = Mlp::new(&widths, Activation::Relu, layout)?;
            layers.push(CouplingLayer { cond, trans, unpermute, scale_net, shift_net });
        }
        let mut covered = vec![false; dim];
        for l in &layers {
            for &c in &l.trans {
                covered[c] = true;
            }
        }
        assert!(covered.iter().all(|&c| c), "coupling masks leave a coordinate untransformed");
        Ok(CouplingFlow { dim, layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for l in &self.layers {
            l.scale_net.init(params, rng);
            l.shift_net.init(params, rng);
        }
    }

    /// Zeroes every conditioner's output layer, turning the flow into the identity map.
    pub fn set_identity(&self, params: &mut [f64]) {
        for l in &self.layers {
            l.scale_net.zero_output_layer(params);
            l.shift_net.zero_output_layer(params);
        }
    }

    /// Conditioner networks of layer `i` as `(scale, shift)`.
    pub fn conditioners(&self, i: usize) -> (&Mlp, &Mlp) {
        (&self.layers[i].scale_net, &self.layers[i].shift_net)
    }

    pub fn transformed_coords(&self, i: usize) -> &[usize] {
        &self.layers[i].trans
    }

    fn conditioner_input(
        &self,
        g: &mut Graph,
        layer: &CouplingLayer,
        x: NodeId,
        tcol: NodeId,
    ) -> NodeId {
        if layer.cond.is_empty() {
            tcol
        } else {
            let xc = g.select_cols(x, layer.cond.clone());
            g.concat_cols(&[xc, tcol])
        }
    }

    fn scale_and_shift(
        &self,
        g: &mut Graph,
        params: &[f64],
        layer: &CouplingLayer,
        inp: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let raw = layer.scale_net.forward(g, params, inp)?;
        let worst = g.value(raw).data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !worst.is_finite() || worst > SCALE_OVERFLOW {
            return Err(Error::numeric(format!(
                "coupling scale overflow: |s| = {worst:.3e} exceeds {SCALE_OVERFLOW}"
            )));
        }
        let s = g.clamp(raw, -SCALE_CLAMP, SCALE_CLAMP);
        let shift = layer.shift_net.forward(g, params, inp)?;
        Ok((s, shift))
    }

    fn reassemble(&self, g: &mut Graph, layer: &CouplingLayer, x: NodeId, new_u: NodeId) -> NodeId {
        if layer.cond.is_empty() {
            return new_u;
        }
        let xc = g.select_cols(x, layer.cond.clone());
        let joined = g.concat_cols(&[xc, new_u]);
        g.select_cols(joined, layer.unpermute.clone())
    }

    /// Data → latent on the tape. Returns `(z, logdet)` with `logdet` of shape `m × 1`.
    pub fn to_latent(
        &self,
        g: &mut Graph,
        params: &[f64],
        x: NodeId,
        times: &[f64],
    ) -> Result<(NodeId, NodeId)> {
        let (m, d) = g.shape(x);
        self.check_shape(m, d, times)?;
        let tcol = g.input(Tensor::column(times));
        let mut h = x;
        let mut logdet: Option<NodeId> = None;
        for layer in &self.layers {
            let inp = self.conditioner_input(g, layer, h, tcol);
            let (s, shift) = self.scale_and_shift(g, params, layer, inp)?;
            let xu = g.select_cols(h, layer.trans.clone());
            let es = g.exp(s);
            let scaled = g.mul(xu, es);
            let zu = g.add(scaled, shift);
            h = self.reassemble(g, layer, h, zu);
            let ld = g.sum_cols(s);
            logdet = Some(match logdet {
                Some(acc) => g.add(acc, ld),
                None => ld,
            });
        }
        Ok((h, logdet.expect("flow has at least one layer")))
    }

    /// Latent → data on the tape.
    pub fn to_data(&self, g: &mut Graph, params: &[f64], z: NodeId, times: &[f64]) -> Result<NodeId> {
        let (m, d) = g.shape(z);
        self.check_shape(m, d, times)?;
        let tcol = g.input(Tensor::column(times));
        let mut h = z;
        for layer in self.layers.iter().rev() {
            let inp = self.conditioner_input(g, layer, h, tcol);
            let (s, shift) = self.scale_and_shift(g, params, layer, inp)?;
            let zu = g.select_cols(h, layer.trans.clone());
            let centered = g.sub(zu, shift);
            let neg_s = g.neg(s);
            let inv = g.exp(neg_s);
            let xu = g.mul(centered, inv);
            h = self.reassemble(g, layer, h, xu);
        }
        Ok(h)
    }

    fn check_shape(&self, m: usize, d: usize, times: &[f64]) -> Result<()> {
        if d != self.dim {
            return Err(Error::config(format!("flow dimension {} but input has {d} columns", self.dim)));
        }
        if times.len() != m {
            return Err(Error::usage(format!("{} times for {m} rows", times.len())));
        }
        Ok(())
    }

    /// Numeric data → latent map for a single point: `(z, log|det ∂z/∂x|)`.
    pub fn inverse(&self, params: &[f64], x: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite input to flow inverse"));
        }
        let mut g = Graph::new();
        let xn = g.input(Tensor::row(x));
        let (z, ld) = self.to_latent(&mut g, params, xn, &[t])?;
        Ok((g.value(z).data.clone(), g.value(ld).item()))
    }

    /// Numeric latent → data map for a single point.
    pub fn forward(&self, params: &[f64], z: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let zn = g.input(Tensor::row(z));
        let x = self.to_data(&mut g, params, zn, &[t])?;
        Ok(g.value(x).data.clone())
    }

    pub fn log_prob_value(&self, params: &[f64], x: &[f64], t: f64) -> Result<f64> {
        let mut g = Graph::new();
        let xn = g.input(Tensor::row(x));
        let lp = self.log_prob(&mut g, params, xn, &[t])?;
        Ok(g.value(lp).item())
    }
}

/// `log N(z; 0, I)` per row.
pub fn standard_normal_log_density(g: &mut Graph, z: NodeId) -> NodeId {
    let d = g.shape(z).1 as f64;
    let sq = g.square(z);
    let ss = g.sum_cols(sq);
    let half = g.scale(ss, -0.5);
    g.offset(half, -0.5 * d * (2.0 * PI).ln())
}

fn check_finite(g: &Graph, node: NodeId, times: &[f64], what: &str) -> Result<()> {
    let v = g.value(node);
    if let Some(r) = (0..v.rows).find(|&r| v.row_slice(r).iter().any(|x| !x.is_finite())) {
        return Err(Error::numeric(format!("non-finite {what} at t = {}", times[r])));
    }
    Ok(())
}

fn draw_standard_normal(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(rows, cols, data)
}

impl MarginalDensity for CouplingFlow {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_prob(&self, g: &mut Graph, params: &[f64], x: NodeId, times: &[f64]) -> Result<NodeId> {
        check_finite(g, x, times, "flow input")?;
        let (z, logdet) = self.to_latent(g, params, x, times)?;
        let base = standard_normal_log_density(g, z);
        let lp = g.add(base, logdet);
        check_finite(g, lp, times, "log-density")?;
        Ok(lp)
    }

    fn sample(
        &self,
        g: &mut Graph,
        params: &[f64],
        times: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        let z = draw_standard_normal(times.len(), self.dim, rng);
        let zn = g.input(z);
        let x = self.to_data(g, params, zn, times)?;
        check_finite(g, x, times, "flow sample")?;
        Ok(x)
    }
}

/// Closed-form Gaussian marginals of a diagonal OU process
/// `dX_k = −κ_k X_k dt + σ dW_k` started from `N(m0, v0)`; `κ_k = 0` gives
/// Brownian motion. Serves as an exactly known `p_t` for oracle checks.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMarginal {
    pub mean0: Vec<f64>,
    pub var0: Vec<f64>,
    pub kappa: Vec<f64>,
    pub sigma: f64,
}

impl GaussianMarginal {
    /// The stationary law of the OU process, constant in time.
    pub fn ou_stationary(kappa: &[f64], sigma: f64) -> Self {
        GaussianMarginal {
            mean0: vec![0.0; kappa.len()],
            var0: kappa.iter().map(|k| sigma * sigma / (2.0 * k)).collect(),
            kappa: kappa.to_vec(),
            sigma,
        }
    }

    pub fn mean(&self, t: f64) -> Vec<f64> {
        self.mean0.iter().zip(&self.kappa).map(|(m, k)| m * (-k * t).exp()).collect()
    }

    pub fn var(&self, t: f64) -> Vec<f64> {
        let s2 = self.sigma * self.sigma;
        self.var0
            .iter()
            .zip(&self.kappa)
            .map(|(v, &k)| {
                if k == 0.0 {
                    v + s2 * t
                } else {
                    let e = (-2.0 * k * t).exp();
                    v * e + s2 * (1.0 - e) / (2.0 * k)
                }
            })
            .collect()
    }

    pub fn log_prob_value(&self, x: &[f64], t: f64) -> f64 {
        let (m, v) = (self.mean(t), self.var(t));
        x.iter()
            .zip(m.iter().zip(&v))
            .map(|(xi, (mi, vi))| -0.5 * (xi - mi).powi(2) / vi - 0.5 * (2.0 * PI * vi).ln())
            .sum()
    }

    fn per_row(&self, times: &[f64], f: impl Fn(&Self, f64) -> Vec<f64>) -> Tensor {
        let d = self.mean0.len();
        let mut data = Vec::with_capacity(times.len() * d);
        for &t in times {
            data.extend(f(self, t));
        }
        Tensor::new(times.len(), d, data)
    }
}

impl MarginalDensity for GaussianMarginal {
    fn dim(&self) -> usize {
        self.mean0.len()
    }

    fn log_prob(&self, g: &mut Graph, _params: &[f64], x: NodeId, times: &[f64]) -> Result<NodeId> {
        let mean = g.input(self.per_row(times, |s, t| s.mean(t)));
        let inv_var = g.input(self.per_row(times, |s, t| s.var(t).iter().map(|v| 1.0 / v).collect()));
        let norm: Vec<f64> = times
            .iter()
            .map(|&t| self.var(t).iter().map(|v| -0.5 * (2.0 * PI * v).ln()).sum())
            .collect();
        let norm = g.input(Tensor::column(&norm));
        let diff = g.sub(x, mean);
        let sq = g.square(diff);
        let w = g.mul(sq, inv_var);
        let quad = g.sum_cols(w);
        let half = g.scale(quad, -0.5);
        Ok(g.add(half, norm))
    }

    fn sample(
        &self,
        g: &mut Graph,
        _params: &[f64],
        times: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        let mut z = draw_standard_normal(times.len(), self.mean0.len(), rng);
        for (r, &t) in times.iter().enumerate() {
            let (m, v) = (self.mean(t), self.var(t));
            for c in 0..m.len() {
                let val = m[c] + v[c].sqrt() * z.get(r, c);
                z.set(r, c, val);
            }
        }
        Ok(g.input(z))
    }
}
