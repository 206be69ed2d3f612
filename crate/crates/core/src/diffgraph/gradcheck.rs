/// Compares an analytic gradient against central differences.
///
/// `f` returns `(loss, gradient)` at the given parameters; the analytic
/// gradient is taken at `params` and the loss alone is used for the
/// perturbed evaluations. The result is
/// `max_i |g_i − fd_i| / max(1, |fd_i|)`.
pub fn grad_check<F>(f: F, params: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, grad) = f(params);
    assert_eq!(grad.len(), params.len(), "gradient length mismatch");
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        p[i] = params[i] + h;
        let up = f(&p).0;
        p[i] = params[i] - h;
        let down = f(&p).0;
        p[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        let err = (grad[i] - fd).abs() / fd.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
