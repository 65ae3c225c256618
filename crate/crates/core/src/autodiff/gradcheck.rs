use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` occurred.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Per-coordinate relative error `|a - c| / max(|a|, |c|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Checks the gradient returned by `loss` against central differences of
/// its value, perturbing one coordinate of `params` at a time by `step`.
///
/// `loss` maps a flat parameter vector to `(value, gradient)`.
pub fn gradcheck<F>(params: &[f64], step: f64, mut loss: F) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("gradcheck step must be > 0"));
    }
    let (_, analytic) = loss(params)?;
    if analytic.len() != params.len() {
        return Err(Error::invalid("gradient length differs from parameter count"));
    }
    let mut x = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let (mut worst, mut worst_index) = (0.0f64, 0usize);
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + step;
        let (up, _) = loss(&x)?;
        x[i] = orig - step;
        let (down, _) = loss(&x)?;
        x[i] = orig;
        let c = (up - down) / (2.0 * step);
        let e = relative_error(analytic[i], c);
        if e > worst {
            worst = e;
            worst_index = i;
        }
        numeric.push(c);
    }
    Ok(GradCheck { max_rel_error: worst, worst_index, analytic, numeric })
}
