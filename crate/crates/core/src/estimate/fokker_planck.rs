use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::diffgraph::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

use super::marginal::DriftFn;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FpElboSpec {
    pub t_end: f64,
    pub steps: usize,
    /// Brownian paths per starting point.
    pub paths: usize,
    pub sigma: f64,
}

/// Monte-Carlo lower bound on `log p_T(x)` for the linear Fokker-Planck
/// equation with drift `b`, averaged over the rows of `x`.
///
/// Paths are driftless Brownian motions `dX = σ dW` started at `x`. Along each
/// path the bound accumulates `−∫ div b dt + ∫ ⟨b, dX⟩/σ² − ½∫ ‖b‖²/σ² dt` with
/// forward-Euler quadrature and adds `log p0(X_T)`. The divergence is exact, one
/// forward-mode pass per coordinate, and stays differentiable in the parameters.
#[allow(clippy::too_many_arguments)]
pub fn linear_fp_elbo(
    g: &mut Graph,
    params: &[f64],
    drift: &DriftFn<'_>,
    log_p0: &dyn Fn(&mut Graph, NodeId) -> NodeId,
    x: &Tensor,
    spec: FpElboSpec,
    rng: &mut dyn RngCore,
) -> Result<NodeId> {
    let (m, d) = x.shape();
    if m == 0 || spec.paths == 0 {
        return Err(Error::usage("ELBO needs starting points and paths"));
    }
    if !(spec.t_end >= 0.0) || (spec.t_end > 0.0 && spec.steps == 0) {
        return Err(Error::usage("ELBO needs T ≥ 0 and at least one step"));
    }
    let rows = m * spec.paths;
    let mut data = Vec::with_capacity(rows * d);
    for r in 0..m {
        for _ in 0..spec.paths {
            data.extend_from_slice(x.row_slice(r));
        }
    }
    let mut pos = Tensor::new(rows, d, data);
    let steps = if spec.t_end == 0.0 { 0 } else { spec.steps };
    let h = if steps == 0 { 0.0 } else { spec.t_end / steps as f64 };
    let inv_s2 = 1.0 / (spec.sigma * spec.sigma);
    let mut acc: Option<NodeId> = None;
    let mut push = |g: &mut Graph, term: NodeId| {
        acc = Some(match acc {
            Some(a) => g.add(a, term),
            None => term,
        });
    };
    for s in 0..steps {
        let xs = g.input(pos.clone());
        let times = vec![s as f64 * h; rows];
        let b = drift(g, params, xs, &times, rng)?;
        let mut div: Option<NodeId> = None;
        for k in 0..d {
            let mut tangent = Tensor::zeros(rows, d);
            for r in 0..rows {
                tangent.set(r, k, 1.0);
            }
            let jv = g.jvp(b, xs, tangent)?;
            let col = g.select_cols(jv, vec![k]);
            div = Some(match div {
                Some(acc) => g.add(acc, col),
                None => col,
            });
        }
        let div_total = g.sum(div.expect("dimension is positive"));
        let div_term = g.scale(div_total, -h);
        push(g, div_term);

        let mut next = pos.clone();
        let sd = spec.sigma * h.sqrt();
        for v in next.data.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
        let dx = Tensor::new(rows, d, next.data.iter().zip(&pos.data).map(|(a, b)| a - b).collect());
        let dxn = g.input(dx);
        let cross = g.dot(b, dxn);
        let cross = g.scale(cross, inv_s2);
        push(g, cross);
        let sq = g.square(b);
        let energy = g.sum(sq);
        let energy = g.scale(energy, -0.5 * h * inv_s2);
        push(g, energy);
        pos = next;
    }
    let end = g.input(pos);
    let lp = log_p0(g, end);
    let lp_total = g.sum(lp);
    push(g, lp_total);
    let total = acc.expect("terminal term always present");
    let mean = g.scale(total, 1.0 / rows as f64);
    if !g.value(mean).is_finite() {
        return Err(Error::numeric("non-finite Fokker-Planck ELBO"));
    }
    Ok(mean)
}
