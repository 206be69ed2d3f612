use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::diffgraph::{clip_grad_norm, AdamW, Graph, NodeId};
use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::rng::stream;

use super::{TrainConfig, TrainReport};

pub(crate) struct BatchObjective {
    /// Sum of the per-unit objective over the batch.
    pub total: NodeId,
    pub penalty: Option<f64>,
}

pub(crate) struct BatchContext<'a> {
    pub epoch: usize,
    pub units: &'a [usize],
    pub rng: &'a mut ChaCha8Rng,
}

/// Mini-batch AdamW ascent on a per-unit objective.
pub(crate) fn run<F>(
    model: &mut DriftModel,
    cfg: &TrainConfig,
    n_units: usize,
    mut objective: F,
) -> Result<TrainReport>
where
    F: FnMut(&mut Graph, &[f64], BatchContext<'_>) -> Result<BatchObjective>,
{
    cfg.validate()?;
    if n_units == 0 {
        return Err(Error::usage("no training units"));
    }
    let start = Instant::now();
    let n_params = model.param_count();
    let mut opt = AdamW::new(cfg.optimizer.clone(), n_params);
    let mut report = TrainReport { seed: cfg.seed, ..Default::default() };
    let diverged = |epoch, step, reason: String, report: &TrainReport, opt: &AdamW| Error::Diverged {
        epoch,
        step,
        reason,
        partial: Box::new(TrainReport {
            steps: opt.steps_taken() as usize,
            final_lr: opt.current_lr(),
            wall_clock_s: start.elapsed().as_secs_f64(),
            ..report.clone()
        }),
    };
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_units).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", &[epoch as u64]));
        let mut epoch_total = 0.0;
        let mut penalty_total = 0.0;
        let mut penalty_batches = 0usize;
        for (step, units) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::new();
            let mut rng = stream(cfg.seed, "batch", &[epoch as u64, step as u64]);
            let ctx = BatchContext { epoch, units, rng: &mut rng };
            let out = match objective(&mut g, &model.params, ctx) {
                Ok(out) => out,
                Err(Error::Numeric(msg)) => return Err(diverged(epoch, step, msg, &report, &opt)),
                Err(e) => return Err(e),
            };
            let value = g.value(out.total).item();
            if !value.is_finite() {
                return Err(diverged(epoch, step, "non-finite objective".into(), &report, &opt));
            }
            let loss = g.scale(out.total, -1.0 / units.len() as f64);
            let mut grads = g.backward(loss)?.params(n_params);
            if grads.iter().any(|v| !v.is_finite()) {
                return Err(diverged(epoch, step, "non-finite gradient".into(), &report, &opt));
            }
            if let Some(max) = cfg.clip_grad_norm {
                clip_grad_norm(&mut grads, max);
            }
            opt.step(&mut model.params, &grads)?;
            epoch_total += value;
            if let Some(p) = out.penalty {
                penalty_total += p;
                penalty_batches += 1;
            }
        }
        let mean = epoch_total / n_units as f64;
        log::debug!("epoch {epoch}: objective {mean:.6}");
        report.loss_trace.push(mean);
        if penalty_batches > 0 {
            report.cc_trace.push(penalty_total / penalty_batches as f64);
        }
    }
    report.epochs = cfg.epochs;
    report.steps = opt.steps_taken() as usize;
    report.final_lr = opt.current_lr();
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}
