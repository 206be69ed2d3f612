use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffgraph::{Activation, Graph, Mlp, NodeId, ParamLayout, Tensor};
use crate::error::{Error, Result};
use crate::flow::{CouplingFlow, FlowSpec, MarginalDensity};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// `b(x, t)` with no population dependence.
    ItoMlp,
    /// `f(x, t) + mean_j φ(x, y_j)` over the observed population.
    EmpiricalMeasure,
    /// `f(x, t) + mean_j φ(x, w_j, t)` over a learned point set `W0`.
    ImplicitMeasure,
    /// `f(x, t) + mean_j φ(x, y_j)` with `y_j` drawn from a learned marginal `p̂_t`.
    MarginalLaw,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::ItoMlp => "ito_mlp",
            Architecture::EmpiricalMeasure => "empirical_measure",
            Architecture::ImplicitMeasure => "implicit_measure",
            Architecture::MarginalLaw => "marginal_law",
        }
    }

    pub fn uses_population(self) -> bool {
        self == Architecture::EmpiricalMeasure
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let all = [
            Architecture::ItoMlp,
            Architecture::EmpiricalMeasure,
            Architecture::ImplicitMeasure,
            Architecture::MarginalLaw,
        ];
        for a in all {
            let short = match a {
                Architecture::ItoMlp => "mlp",
                Architecture::EmpiricalMeasure => "em",
                Architecture::ImplicitMeasure => "im",
                Architecture::MarginalLaw => "ml",
            };
            if key == a.name() || key == short {
                return Ok(a);
            }
        }
        Err(Error::config(format!("unknown architecture '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchitectureSpec {
    pub kind: Architecture,
    pub dim: usize,
    /// Hidden widths of `f` (or of the whole network for `ItoMlp`).
    pub f_hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub activation: Activation,
    /// Rows of `W0` for the implicit measure, flow samples per query for the marginal law.
    pub width: usize,
    pub flow: FlowSpec,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        ArchitectureSpec {
            kind: Architecture::ItoMlp,
            dim: 2,
            f_hidden: vec![128; 4],
            phi_hidden: vec![128; 4],
            activation: Activation::LeakyRelu,
            width: 128,
            flow: FlowSpec::default(),
        }
    }
}

impl ArchitectureSpec {
    pub fn new(kind: Architecture, dim: usize) -> Self {
        let f_hidden = if kind == Architecture::ItoMlp { vec![128; 8] } else { vec![128; 4] };
        ArchitectureSpec { kind, dim, f_hidden, ..Default::default() }
    }

    /// Same architecture with every hidden layer of `f` and `φ` set to `width` units.
    pub fn with_hidden(mut self, layers: usize, width: usize) -> Self {
        self.f_hidden = vec![width; layers];
        self.phi_hidden = vec![width; layers];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("architecture dimension must be positive"));
        }
        if self.kind != Architecture::ItoMlp && self.width == 0 && self.kind != Architecture::EmpiricalMeasure {
            return Err(Error::config("measure width must be positive"));
        }
        Ok(())
    }
}

/// Population attached to each query row of an empirical-measure evaluation.
///
/// `points` stores the distinct population members; row `r` of the query sees
/// the next `counts[r]` entries of `index`.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationBatch {
    pub points: Tensor,
    pub index: Vec<usize>,
    pub counts: Vec<usize>,
}

impl PopulationBatch {
    /// Every one of `rows` queries sees the whole of `points`.
    pub fn shared(points: Tensor, rows: usize) -> Self {
        let n = points.rows;
        let index = (0..rows).flat_map(|_| 0..n).collect();
        PopulationBatch { points, index, counts: vec![n; rows] }
    }

    /// Query rows grouped into blocks; block `b` sees `groups[b]`, and `rows_per_group[b]`
    /// consecutive queries belong to it.
    pub fn grouped(groups: &[Tensor], rows_per_group: &[usize]) -> Result<Self> {
        if groups.len() != rows_per_group.len() {
            return Err(Error::usage("one row count per population group is required"));
        }
        let cols = groups.first().map_or(0, |t| t.cols);
        let mut data = Vec::new();
        let mut index = Vec::new();
        let mut counts = Vec::new();
        let mut base = 0;
        for (grp, &rows) in groups.iter().zip(rows_per_group) {
            if grp.cols != cols {
                return Err(Error::config("population groups differ in dimension"));
            }
            data.extend_from_slice(&grp.data);
            for _ in 0..rows {
                index.extend(base..base + grp.rows);
                counts.push(grp.rows);
            }
            base += grp.rows;
        }
        Ok(PopulationBatch { points: Tensor::new(base, cols, data), index, counts })
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }
}

/// A parameterized drift `b_θ(x, t)` of one of the four architectures.
///
/// The parameters live in a flat vector laid out as `f`, then `φ`, then `W0`
/// or the flow, so the optimizer sees a single slice.
#[derive(Clone, Debug)]
pub struct DriftModel {
    spec: ArchitectureSpec,
    f_net: Mlp,
    phi_net: Option<Mlp>,
    w0_offset: Option<usize>,
    flow: Option<CouplingFlow>,
    flow_range: std::ops::Range<usize>,
    pub params: Vec<f64>,
}

impl DriftModel {
    /// Builds the network with all parameters zero.
    pub fn zeroed(spec: &ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let mut layout = ParamLayout::new();
        let mut widths = vec![d + 1];
        widths.extend(&spec.f_hidden);
        widths.push(d);
        let f_net = Mlp::new(&widths, spec.activation, &mut layout)?;
        let phi_in = match spec.kind {
            Architecture::ItoMlp => None,
            Architecture::EmpiricalMeasure | Architecture::MarginalLaw => Some(2 * d),
            Architecture::ImplicitMeasure => Some(2 * d + 1),
        };
        let phi_net = match phi_in {
            Some(fan_in) => {
                let mut w = vec![fan_in];
                w.extend(&spec.phi_hidden);
                w.push(d);
                Some(Mlp::new(&w, spec.activation, &mut layout)?)
            }
            None => None,
        };
        let w0_offset = (spec.kind == Architecture::ImplicitMeasure).then(|| layout.alloc(spec.width * d));
        let flow_start = layout.len();
        let flow = if spec.kind == Architecture::MarginalLaw {
            Some(CouplingFlow::new(d, &spec.flow, &mut layout)?)
        } else {
            None
        };
        let flow_range = flow_start..layout.len();
        Ok(DriftModel {
            spec: spec.clone(),
            f_net,
            phi_net,
            w0_offset,
            flow,
            flow_range,
            params: vec![0.0; layout.len()],
        })
    }

    /// Randomly initialized model; the same seed gives the same parameters.
    pub fn new(spec: &ArchitectureSpec, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = std::mem::take(&mut model.params);
        model.f_net.init(&mut p, &mut rng);
        if let Some(phi) = &model.phi_net {
            phi.init(&mut p, &mut rng);
        }
        if let Some(off) = model.w0_offset {
            for v in &mut p[off..off + spec.width * spec.dim] {
                *v = rng.sample(StandardNormal);
            }
        }
        if let Some(flow) = &model.flow {
            flow.init(&mut p, &mut rng);
        }
        model.params = p;
        Ok(model)
    }

    pub fn with_params(spec: &ArchitectureSpec, params: Vec<f64>) -> Result<Self> {
        let mut model = Self::zeroed(spec)?;
        if params.len() != model.params.len() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn kind(&self) -> Architecture {
        self.spec.kind
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn f_net(&self) -> &Mlp {
        &self.f_net
    }

    pub fn phi_net(&self) -> Option<&Mlp> {
        self.phi_net.as_ref()
    }

    pub fn flow(&self) -> Option<&CouplingFlow> {
        self.flow.as_ref()
    }

    /// Index range of the flow's parameters inside the flat vector (empty without a flow).
    pub fn flow_range(&self) -> std::ops::Range<usize> {
        self.flow_range.clone()
    }

    /// `W0` as an `n × d` tensor.
    pub fn w0(&self) -> Option<Tensor> {
        self.w0_offset.map(|off| {
            let n = self.spec.width * self.spec.dim;
            Tensor::new(self.spec.width, self.spec.dim, self.params[off..off + n].to_vec())
        })
    }

    fn check_rows(&self, g: &Graph, x: NodeId, times: &[f64]) -> Result<usize> {
        let (m, d) = g.shape(x);
        if d != self.spec.dim {
            return Err(Error::config(format!("drift expects dimension {}, got {d}", self.spec.dim)));
        }
        if times.len() != m {
            return Err(Error::usage(format!("{} times for {m} query rows", times.len())));
        }
        Ok(m)
    }

    fn f_term(&self, g: &mut Graph, params: &[f64], x: NodeId, times: &[f64]) -> Result<NodeId> {
        let tcol = g.input(Tensor::column(times));
        let inp = g.concat_cols(&[x, tcol]);
        self.f_net.forward(g, params, inp)
    }

    fn phi(&self) -> Result<&Mlp> {
        self.phi_net.as_ref().ok_or_else(|| Error::usage("architecture has no interaction network"))
    }

    /// Drift at each row of `x` (`m × d`). `population` is required for the
    /// empirical measure and ignored otherwise; `rng` drives the marginal-law samples.
    pub fn eval(
        &self,
        g: &mut Graph,
        params: &[f64],
        x: NodeId,
        times: &[f64],
        population: Option<&PopulationBatch>,
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        match self.spec.kind {
            Architecture::ItoMlp => self.eval_ito(g, params, x, times),
            Architecture::EmpiricalMeasure => {
                let pop = population
                    .ok_or_else(|| Error::usage("empirical-measure drift needs a population"))?;
                self.eval_em(g, params, x, times, pop)
            }
            Architecture::ImplicitMeasure => self.eval_im(g, params, x, times),
            Architecture::MarginalLaw => self.eval_ml(g, params, x, times, rng),
        }
    }

    pub fn eval_ito(&self, g: &mut Graph, params: &[f64], x: NodeId, times: &[f64]) -> Result<NodeId> {
        self.check_rows(g, x, times)?;
        self.f_term(g, params, x, times)
    }

    pub fn eval_em(
        &self,
        g: &mut Graph,
        params: &[f64],
        x: NodeId,
        times: &[f64],
        pop: &PopulationBatch,
    ) -> Result<NodeId> {
        let m = self.check_rows(g, x, times)?;
        if pop.rows() != m {
            return Err(Error::usage(format!("population covers {} rows, query has {m}", pop.rows())));
        }
        if pop.counts.contains(&0) {
            return Err(Error::usage("empty population for a query row"));
        }
        if pop.points.cols != self.spec.dim {
            return Err(Error::config("population dimension does not match drift"));
        }
        let f = self.f_term(g, params, x, times)?;
        let xr = g.gather_rows(x, repeat_index(&pop.counts));
        let pts = g.input(pop.points.clone());
        let yr = g.gather_rows(pts, pop.index.clone());
        let inp = g.concat_cols(&[xr, yr]);
        let phi = self.phi()?.forward(g, params, inp)?;
        let mf = g.segment_mean(phi, pop.counts.clone());
        Ok(g.add(f, mf))
    }

    /// `mean_j φ(x, w_j, t)` over the learned rows of `W0`.
    pub fn mean_field_layer(&self, g: &mut Graph, params: &[f64], x: NodeId, times: &[f64]) -> Result<NodeId> {
        let m = self.check_rows(g, x, times)?;
        let off = self.w0_offset.ok_or_else(|| Error::usage("architecture has no W0"))?;
        let n = self.spec.width;
        let counts = vec![n; m];
        let rep = repeat_index(&counts);
        let xr = g.gather_rows(x, rep.clone());
        let w0 = g.param(params, off, n, self.spec.dim);
        let wt = g.gather_rows(w0, (0..m).flat_map(|_| 0..n).collect());
        let trep: Vec<f64> = rep.iter().map(|&r| times[r]).collect();
        let tcol = g.input(Tensor::column(&trep));
        let inp = g.concat_cols(&[xr, wt, tcol]);
        let phi = self.phi()?.forward(g, params, inp)?;
        Ok(g.segment_mean(phi, counts))
    }

    pub fn eval_im(&self, g: &mut Graph, params: &[f64], x: NodeId, times: &[f64]) -> Result<NodeId> {
        let f = self.f_term(g, params, x, times)?;
        let mf = self.mean_field_layer(g, params, x, times)?;
        Ok(g.add(f, mf))
    }

    pub fn eval_ml(
        &self,
        g: &mut Graph,
        params: &[f64],
        x: NodeId,
        times: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<NodeId> {
        let m = self.check_rows(g, x, times)?;
        let flow = self.flow.as_ref().ok_or_else(|| Error::usage("architecture has no flow"))?;
        let f = self.f_term(g, params, x, times)?;
        let n = self.spec.width;
        let mut distinct: Vec<f64> = Vec::new();
        let mut group = Vec::with_capacity(m);
        for &t in times {
            let k = match distinct.iter().position(|&u| u.to_bits() == t.to_bits()) {
                Some(k) => k,
                None => {
                    distinct.push(t);
                    distinct.len() - 1
                }
            };
            group.push(k);
        }
        let tsamp: Vec<f64> = distinct.iter().flat_map(|&t| std::iter::repeat_n(t, n)).collect();
        let samples = flow.sample(g, params, &tsamp, rng)?;
        let sample_idx: Vec<usize> = group.iter().flat_map(|&k| k * n..(k + 1) * n).collect();
        let ys = g.gather_rows(samples, sample_idx);
        let counts = vec![n; m];
        let xr = g.gather_rows(x, repeat_index(&counts));
        let inp = g.concat_cols(&[xr, ys]);
        let phi = self.phi()?.forward(g, params, inp)?;
        let mf = g.segment_mean(phi, counts);
        Ok(g.add(f, mf))
    }

    /// Numeric evaluation of the drift at the rows of `xs`.
    pub fn evaluate(
        &self,
        xs: &Tensor,
        times: &[f64],
        population: Option<&PopulationBatch>,
        rng: &mut dyn RngCore,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(xs.clone());
        let b = self.eval(&mut g, &self.params, x, times, population, rng)?;
        let out = g.value(b).clone();
        if !out.is_finite() {
            return Err(Error::numeric("non-finite drift value"));
        }
        Ok(out)
    }

    /// Log-density of the learned marginal at each row, for the marginal-law architecture.
    pub fn marginal_log_prob(&self, xs: &Tensor, times: &[f64]) -> Result<Vec<f64>> {
        let flow = self.flow.as_ref().ok_or_else(|| Error::usage("architecture has no flow"))?;
        let mut g = Graph::new();
        let x = g.input(xs.clone());
        let lp = flow.log_prob(&mut g, &self.params, x, times)?;
        Ok(g.value(lp).data.clone())
    }
}

/// `[0, 0, …, 1, 1, …]` with row `r` repeated `counts[r]` times.
fn repeat_index(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(r, &c)| std::iter::repeat_n(r, c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::{grad_check, LEAKY_RELU_SLOPE};

    fn small(kind: Architecture, d: usize) -> ArchitectureSpec {
        ArchitectureSpec {
            width: 5,
            flow: FlowSpec { layers: 2, hidden: vec![6] },
            ..ArchitectureSpec::new(kind, d).with_hidden(2, 7)
        }
    }

    fn leaky(x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            LEAKY_RELU_SLOPE * x
        }
    }

    /// Straight-line forward pass of an MLP from its flat parameters.
    fn oracle_mlp(net: &Mlp, params: &[f64], x: &[f64]) -> Vec<f64> {
        let widths = net.widths();
        let mut off = net.param_range().start;
        let mut h = x.to_vec();
        for l in 0..widths.len() - 1 {
            let (fi, fo) = (widths[l], widths[l + 1]);
            let w = &params[off..off + fi * fo];
            let b = &params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut out = b.to_vec();
            for i in 0..fi {
                for j in 0..fo {
                    out[j] += h[i] * w[i * fo + j];
                }
            }
            if l + 2 < widths.len() {
                out.iter_mut().for_each(|v| *v = leaky(*v));
            }
            h = out;
        }
        h
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn empirical_measure_matches_loop_oracle() {
        let model = DriftModel::new(&small(Architecture::EmpiricalMeasure, 2), 3).unwrap();
        let xs = Tensor::new(2, 2, vec![0.3, -0.2, 1.0, 0.5]);
        let pop = Tensor::new(3, 2, vec![0.0, 0.1, -1.0, 2.0, 0.5, 0.5]);
        let batch = PopulationBatch::shared(pop.clone(), 2);
        let got = model.evaluate(&xs, &[0.1, 0.7], Some(&batch), &mut rng()).unwrap();
        for r in 0..2 {
            let x = xs.row_slice(r);
            let t = [0.1, 0.7][r];
            let mut expect = oracle_mlp(model.f_net(), &model.params, &[x[0], x[1], t]);
            for j in 0..3 {
                let y = pop.row_slice(j);
                let phi = oracle_mlp(model.phi_net().unwrap(), &model.params, &[x[0], x[1], y[0], y[1]]);
                for k in 0..2 {
                    expect[k] += phi[k] / 3.0;
                }
            }
            for k in 0..2 {
                assert!((got.get(r, k) - expect[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn implicit_measure_matches_loop_oracle() {
        let model = DriftModel::new(&small(Architecture::ImplicitMeasure, 2), 5).unwrap();
        let w0 = model.w0().unwrap();
        let xs = Tensor::new(1, 2, vec![-0.4, 0.9]);
        let got = model.evaluate(&xs, &[0.25], None, &mut rng()).unwrap();
        let x = xs.row_slice(0);
        let mut expect = oracle_mlp(model.f_net(), &model.params, &[x[0], x[1], 0.25]);
        for j in 0..w0.rows {
            let w = w0.row_slice(j);
            let phi = oracle_mlp(model.phi_net().unwrap(), &model.params, &[x[0], x[1], w[0], w[1], 0.25]);
            for k in 0..2 {
                expect[k] += phi[k] / w0.rows as f64;
            }
        }
        for k in 0..2 {
            assert!((got.get(0, k) - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_phi_reduces_to_ito_part() {
        for kind in [Architecture::EmpiricalMeasure, Architecture::ImplicitMeasure, Architecture::MarginalLaw] {
            let mut model = DriftModel::new(&small(kind, 2), 9).unwrap();
            let phi = model.phi_net().unwrap().clone();
            phi.zero(&mut model.params);
            let xs = Tensor::new(1, 2, vec![0.2, 0.3]);
            let pop = PopulationBatch::shared(Tensor::new(1, 2, vec![5.0, 5.0]), 1);
            let got = model.evaluate(&xs, &[0.5], Some(&pop), &mut rng()).unwrap();
            let expect = oracle_mlp(model.f_net(), &model.params, &[0.2, 0.3, 0.5]);
            assert!((got.get(0, 0) - expect[0]).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn empirical_measure_requires_population() {
        let model = DriftModel::new(&small(Architecture::EmpiricalMeasure, 1), 1).unwrap();
        let xs = Tensor::new(1, 1, vec![0.0]);
        assert!(matches!(model.evaluate(&xs, &[0.0], None, &mut rng()), Err(Error::Usage(_))));
        let empty = PopulationBatch { points: Tensor::zeros(0, 1), index: vec![], counts: vec![0] };
        assert!(model.evaluate(&xs, &[0.0], Some(&empty), &mut rng()).is_err());
    }

    #[test]
    fn grouped_population_routes_rows() {
        let a = Tensor::new(1, 1, vec![1.0]);
        let b = Tensor::new(2, 1, vec![2.0, 3.0]);
        let batch = PopulationBatch::grouped(&[a, b], &[2, 1]).unwrap();
        assert_eq!(batch.counts, vec![1, 1, 2]);
        assert_eq!(batch.index, vec![0, 0, 1, 2]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [
            Architecture::ItoMlp,
            Architecture::EmpiricalMeasure,
            Architecture::ImplicitMeasure,
            Architecture::MarginalLaw,
        ] {
            let mut spec = small(kind, 2);
            spec.activation = Activation::Tanh;
            let model = DriftModel::new(&spec, 21).unwrap();
            let xs = Tensor::new(2, 2, vec![0.3, -0.1, 0.8, 0.4]);
            let pop = PopulationBatch::shared(Tensor::new(2, 2, vec![0.0, 1.0, -1.0, 0.5]), 2);
            let f = |p: &[f64]| {
                let mut g = Graph::new();
                let x = g.input(xs.clone());
                let mut r = ChaCha8Rng::seed_from_u64(4);
                let b = model.eval(&mut g, p, x, &[0.2, 0.6], Some(&pop), &mut r).unwrap();
                let loss = g.dot(b, b);
                let grads = g.backward(loss).unwrap();
                (g.value(loss).item(), grads.params(p.len()))
            };
            let err = grad_check(f, &model.params, 1e-6);
            assert!(err < 1e-5, "{kind:?}: {err}");
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = small(Architecture::MarginalLaw, 2);
        let a = DriftModel::new(&spec, 7).unwrap();
        let b = DriftModel::new(&spec, 7).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, DriftModel::new(&spec, 8).unwrap().params);
    }

    #[test]
    fn parameter_vector_length() {
        let spec = small(Architecture::ImplicitMeasure, 2);
        let model = DriftModel::zeroed(&spec).unwrap();
        let f = 3 * 7 + 7 + 7 * 7 + 7 + 7 * 2 + 2;
        let phi = 5 * 7 + 7 + 7 * 7 + 7 + 7 * 2 + 2;
        assert_eq!(model.param_count(), f + phi + 5 * 2);
        assert!(DriftModel::with_params(&spec, vec![0.0; 3]).is_err());
    }

    #[test]
    fn architecture_names_parse() {
        assert_eq!("em".parse::<Architecture>().unwrap(), Architecture::EmpiricalMeasure);
        assert_eq!("marginal_law".parse::<Architecture>().unwrap(), Architecture::MarginalLaw);
        assert!("foo".parse::<Architecture>().is_err());
    }
}
