//! Central finite differences against the analytic gradient.

use super::params::NmtParams;
use super::NmtError;

/// Gradients smaller than this in magnitude are compared absolutely, which
/// keeps roundoff on near-zero entries from dominating the ratio.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    /// Worst relative error per tensor, in parameter order.
    pub per_tensor: Vec<(String, f64)>,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Compares every analytic partial derivative of `sequence_loss` with
/// `(L(θ + ε) - L(θ - ε)) / 2ε`.
pub fn grad_check(
    params: &NmtParams,
    src: &[usize],
    tgt: &[usize],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NmtError> {
    let (_, grad) = params.loss_and_grad(src, tgt)?;
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.data.to_vec()))
        .collect();

    let mut probe = params.clone();
    let mut per_tensor = Vec::with_capacity(analytic.len());
    let mut worst = (String::new(), 0);
    let mut max_err = 0.0f64;
    let mut checked = 0;
    for (t, (name, a)) in analytic.iter().enumerate() {
        let mut tensor_max = 0.0f64;
        for (i, &ai) in a.iter().enumerate() {
            let orig = probe.slices_mut()[t][i];
            probe.slices_mut()[t][i] = orig + epsilon;
            let plus = probe.sequence_loss(src, tgt)?;
            probe.slices_mut()[t][i] = orig - epsilon;
            let minus = probe.sequence_loss(src, tgt)?;
            probe.slices_mut()[t][i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(ai, numeric);
            tensor_max = tensor_max.max(err);
            if err > max_err || checked == 0 {
                max_err = max_err.max(err);
                worst = (name.clone(), i);
            }
            checked += 1;
        }
        per_tensor.push((name.clone(), tensor_max));
    }
    Ok(GradCheckReport {
        max_relative_error: max_err,
        worst,
        per_tensor,
        checked,
        tolerance,
    })
}
