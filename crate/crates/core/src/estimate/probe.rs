use crate::diffgraph::Graph;
use crate::drift::{Architecture, DriftModel};
use crate::error::{Error, Result};
use crate::simulate::TrajectoryDataset;

/// Average total interaction `Σ_k φ(x, w_k, t)` of an implicit-measure model
/// over every observation and every row of `W0`, summed across output
/// coordinates. Used to compare the interaction size of independently trained
/// models.
pub fn im_norm_probe(model: &DriftModel, ds: &TrajectoryDataset) -> Result<f64> {
    if model.kind() != Architecture::ImplicitMeasure {
        return Err(Error::config("probe needs an implicit-measure model"));
    }
    if ds.dim() != model.dim() {
        return Err(Error::config("dataset and drift dimensions differ"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for j in 0..ds.n_times() {
        let pop = ds.population(j);
        if pop.rows == 0 {
            continue;
        }
        let mut g = Graph::new();
        let x = g.input(pop.clone());
        let times = vec![ds.times()[j]; pop.rows];
        let mf = model.mean_field_layer(&mut g, &model.params, x, &times)?;
        total += g.value(mf).data.iter().sum::<f64>();
        count += pop.rows;
    }
    Ok(total / count as f64)
}
