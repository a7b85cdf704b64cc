use super::model::{ModelConfig, SrDenoiser};
use super::Tensor;
use crate::error::{shape_err, Result};

/// Outcome of comparing backpropagated gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Analytic gradient of every parameter, in network order.
    pub analytic: Vec<Vec<f64>>,
}

/// Relative error with an absolute floor so that gradients that are both
/// essentially zero compare equal.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Checks the network's parameter gradients in `f64` against central finite
/// differences (step `1e-4`).
///
/// `loss_fn` maps the network output to `(loss, d loss / d output)`. Up to
/// `max_per_param` entries of each parameter array are probed, spread evenly.
pub fn gradient_check<F>(
    config: &ModelConfig,
    probe: &Tensor<f64>,
    loss_fn: F,
    max_per_param: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<(f64, Tensor<f64>)>,
{
    const STEP: f64 = 1e-4;
    if probe.height > 8 || probe.width > 8 {
        return Err(shape_err!("gradient probe must be at most 8x8"));
    }
    let mut model = SrDenoiser::<f64>::new(config.clone())?;
    let trace = model.forward_trace(probe.clone())?;
    let (_, grad_out) = loss_fn(&trace.output)?;
    model.zero_grad();
    model.backward(&trace, grad_out);
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let n_params = analytic.len();
    for pi in 0..n_params {
        let len = analytic[pi].len();
        let stride = (len / max_per_param.max(1)).max(1);
        for idx in (0..len).step_by(stride).take(max_per_param) {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut params = model.params_mut();
                let original = params[pi].value[idx];
                params[pi].value[idx] = original + delta;
                let out = model.forward_tensor(probe.clone());
                model.params_mut()[pi].value[idx] = original;
                Ok(loss_fn(&out?)?.0)
            };
            let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[pi][idx], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        checked,
        analytic,
    })
}
