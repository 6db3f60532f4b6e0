use super::lstm::LstmStack;
use crate::error::Result;

/// Central finite-difference gradient of the single-window loss.
pub fn numeric_gradient(model: &LstmStack, x: &[f64], y: f64, eps: f64) -> Result<Vec<f64>> {
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.params().len());
    for i in 0..model.params().len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let plus = probe.loss(x, y)?;
        probe.params_mut()[i] = orig - eps;
        let minus = probe.loss(x, y)?;
        probe.params_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Max over parameters of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn gradient_check(model: &LstmStack, x: &[f64], y: f64, eps: f64) -> Result<f64> {
    let (_, analytic) = model.loss_and_gradient(x, y)?;
    let numeric = numeric_gradient(model, x, y, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-12))
        .fold(0.0, f64::max))
}
