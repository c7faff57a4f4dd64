use super::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckResult {
    /// Max relative error over the entries of each input.
    pub per_input: Vec<f64>,
    pub max_error: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic(inputs)` with central differences of `loss` at step
/// `h`, entry by entry. Reports; never panics on a mismatch.
pub fn grad_check<F, G>(inputs: &[Tensor<f64>], h: f64, loss: F, analytic: G) -> GradCheckResult
where
    F: Fn(&[Tensor<f64>]) -> f64,
    G: Fn(&[Tensor<f64>]) -> Vec<Tensor<f64>>,
{
    let grads = analytic(inputs);
    assert_eq!(grads.len(), inputs.len(), "one gradient per input");
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, grad) in grads.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[i].shape(), "gradient {i} shape");
        let mut worst = 0.0f64;
        for j in 0..inputs[i].len() {
            let original = inputs[i].data()[j];
            work[i].data_mut()[j] = original + h;
            let up = loss(&work);
            work[i].data_mut()[j] = original - h;
            let down = loss(&work);
            work[i].data_mut()[j] = original;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
        per_input.push(worst);
    }
    let max_error = per_input.iter().copied().fold(0.0, f64::max);
    GradCheckResult {
        per_input,
        max_error,
    }
}
