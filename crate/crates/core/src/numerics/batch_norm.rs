use super::{Mode, Real, Tensor};
use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::from_fn(&[features], |_| T::one()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormCache<T> {
    pub normalized: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Normalizes `N x F` input per feature. Train mode uses batch statistics
/// (biased variance) and folds them into the running state with momentum
/// [`BN_MOMENTUM`]; infer mode uses the running state only and returns no cache.
pub fn batch_norm_apply<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    input.expect_rank(2, "batch norm input")?;
    let (n, f) = (input.shape()[0], input.shape()[1]);
    for (what, t) in [
        ("gamma", gamma),
        ("beta", beta),
        ("running mean", &state.running_mean),
        ("running var", &state.running_var),
    ] {
        if t.shape() != [f] {
            return Err(Error::shape(format!(
                "batch norm {what} has shape {:?} for {f} features",
                t.shape()
            )));
        }
    }
    let eps = T::of(BN_EPSILON);
    let (mean, var) = match mode {
        Mode::Train => {
            if n == 0 {
                return Err(Error::shape("batch norm needs at least one row in train mode"));
            }
            let count = T::from_usize(n).expect("count");
            let mut mean = vec![T::zero(); f];
            for r in 0..n {
                for (m, &x) in mean.iter_mut().zip(input.row(r)) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            let mut var = vec![T::zero(); f];
            for r in 0..n {
                for ((v, &x), &m) in var.iter_mut().zip(input.row(r)).zip(&mean) {
                    *v += (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let momentum = T::of(BN_MOMENTUM);
            let rest = T::one() - momentum;
            for j in 0..f {
                let rm = &mut state.running_mean.data_mut()[j];
                *rm = momentum * *rm + rest * mean[j];
                let rv = &mut state.running_var.data_mut()[j];
                *rv = momentum * *rv + rest * var[j];
            }
            (mean, var)
        }
        Mode::Infer => (
            state.running_mean.data().to_vec(),
            state.running_var.data().to_vec(),
        ),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(&[n, f]);
    let mut output = Tensor::zeros(&[n, f]);
    for r in 0..n {
        for j in 0..f {
            let xh = (input.row(r)[j] - mean[j]) * inv_std[j];
            normalized.row_mut(r)[j] = xh;
            output.row_mut(r)[j] = gamma.data()[j] * xh + beta.data()[j];
        }
    }
    let cache = (mode == Mode::Train).then_some(BatchNormCache {
        normalized,
        inv_std,
    });
    Ok((output, cache))
}

/// Backward through train-mode batch norm.
pub fn batch_norm_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<BatchNormGrads<T>> {
    let shape = cache.normalized.shape();
    if grad_out.shape() != shape {
        return Err(Error::shape(format!(
            "batch norm gradient {:?} for output {shape:?}",
            grad_out.shape()
        )));
    }
    let (n, f) = (shape[0], shape[1]);
    let count = T::from_usize(n).expect("count");
    let mut d_gamma = vec![T::zero(); f];
    let mut d_beta = vec![T::zero(); f];
    let mut sum_dxh = vec![T::zero(); f];
    let mut sum_dxh_xh = vec![T::zero(); f];
    for r in 0..n {
        for j in 0..f {
            let g = grad_out.row(r)[j];
            let xh = cache.normalized.row(r)[j];
            d_gamma[j] += g * xh;
            d_beta[j] += g;
            let dxh = g * gamma.data()[j];
            sum_dxh[j] += dxh;
            sum_dxh_xh[j] += dxh * xh;
        }
    }
    let mut d_input = Tensor::zeros(&[n, f]);
    for r in 0..n {
        for j in 0..f {
            let xh = cache.normalized.row(r)[j];
            let dxh = grad_out.row(r)[j] * gamma.data()[j];
            d_input.row_mut(r)[j] =
                cache.inv_std[j] / count * (count * dxh - sum_dxh[j] - xh * sum_dxh_xh[j]);
        }
    }
    Ok(BatchNormGrads {
        input: d_input,
        gamma: Tensor::from_vec(&[f], d_gamma)?,
        beta: Tensor::from_vec(&[f], d_beta)?,
    })
}
