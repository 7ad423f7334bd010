use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward, forward, CellKind, ModelParameters, NetError, TENSOR_NAMES};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Tensor and flat index where the largest error occurred.
    pub worst: (String, usize),
    pub checked: usize,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn prediction(params: &ModelParameters<f64>, inputs: &[f64]) -> Result<f64, NetError> {
    forward(params, inputs).map(|(y, _)| y)
}

/// Checks `analytic` against central differences of `(prediction - target)^2`
/// for every parameter. Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check_with<F>(
    params: &ModelParameters<f64>,
    inputs: &[f64],
    target: f64,
    step: f64,
    tolerance: f64,
    analytic: F,
) -> Result<GradCheckReport, NetError>
where
    F: Fn(&ModelParameters<f64>, &[f64], f64) -> Result<ModelParameters<f64>, NetError>,
{
    let grads = analytic(params, inputs, target)?;
    params.check_same_shape(&grads)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (TENSOR_NAMES[0].to_string(), 0),
        checked: 0,
        step,
        tolerance,
        passed: true,
    };
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        for i in 0..params.tensors()[t].len() {
            let original = params.tensors()[t][i];
            probe.tensors_mut()[t][i] = original + step;
            let up = prediction(&probe, inputs)?;
            probe.tensors_mut()[t][i] = original - step;
            let down = prediction(&probe, inputs)?;
            probe.tensors_mut()[t][i] = original;

            // (up - t)^2 - (down - t)^2, factored to avoid cancellation
            let numeric = (up - down) * (up + down - 2.0 * target) / (2.0 * step);
            let a = grads.tensors()[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if !(rel <= report.max_relative_error) {
                report.max_relative_error = rel;
                report.worst = (name.to_string(), i);
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_relative_error <= tolerance;
    Ok(report)
}

/// Gradient check of [`backward`] in double precision.
pub fn grad_check(
    params: &ModelParameters<f64>,
    inputs: &[f64],
    target: f64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NetError> {
    grad_check_with(params, inputs, target, step, tolerance, |p, x, t| {
        let (_, trace) = forward(p, x)?;
        backward(p, &trace, x, t)
    })
}

/// A seeded random model, input sequence in `[-1, 1]` and target in
/// `[-1, 1]`, for gradient checking.
pub fn random_case(
    seed: u64,
    kind: CellKind,
    input_size: usize,
    hidden_size: usize,
    steps: usize,
) -> (ModelParameters<f64>, Vec<f64>, f64) {
    let params = ModelParameters::init(kind, input_size, hidden_size, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let inputs = (0..steps * input_size).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    (params, inputs, rng.gen_range(-1.0..=1.0))
}
