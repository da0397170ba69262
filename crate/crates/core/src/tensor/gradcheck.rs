//! Central finite-difference verification of reverse-mode gradients.

use super::{Result, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Denominator floor for the relative error, so gradients that are
/// numerically zero are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

/// Compares the backward pass of `f` against central differences with step
/// `eps` for every element of every tracked input.
///
/// The relative error of one element is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    inputs.iter().for_each(Tensor::zero_grad);
    f(inputs)?.backward()?;
    let analytic: Vec<Option<Vec<f64>>> = inputs.iter().map(Tensor::grad).collect();
    inputs.iter().for_each(Tensor::zero_grad);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for (input, grad) in inputs.iter().zip(&analytic) {
        if !input.requires_grad() {
            continue;
        }
        let zeros = vec![0.0; input.numel()];
        let grad = grad.as_ref().unwrap_or(&zeros);
        let base = input.to_vec();
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + eps;
            input.set_data(probe.clone())?;
            let plus = f(inputs)?.item();
            probe[i] = base[i] - eps;
            input.set_data(probe)?;
            let minus = f(inputs)?.item();
            input.set_data(base.clone())?;
            let numeric = (plus - minus) / (2.0 * eps);
            let abs = (grad[i] - numeric).abs();
            let rel = abs / grad[i].abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
