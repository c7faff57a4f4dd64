use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pooled<T> {
    pub output: Tensor<T>,
    /// Input row chosen for each output cell (row-major over output).
    pub argmax: Vec<usize>,
}

/// Per-channel max over windows starting every `stride` rows:
/// `(L x C) -> (ceil(L / stride) x C)`. Ties go to the first maximal row.
pub fn maxpool1d<T: Real>(input: &Tensor<T>, window: usize, stride: usize) -> Result<Pooled<T>> {
    input.expect_rank(2, "pool input")?;
    if window == 0 || stride == 0 {
        return Err(Error::shape("pool window and stride must be at least 1"));
    }
    let (len, channels) = (input.shape()[0], input.shape()[1]);
    if len == 0 {
        return Err(Error::shape("pool input must have at least one row"));
    }
    let out_len = len.div_ceil(stride);
    let mut output = Vec::with_capacity(out_len * channels);
    let mut argmax = Vec::with_capacity(out_len * channels);
    for p in 0..out_len {
        let start = p * stride;
        let end = (start + window).min(len);
        for c in 0..channels {
            let mut best = start;
            let mut best_val = input.data()[start * channels + c];
            for l in start + 1..end {
                let v = input.data()[l * channels + c];
                if v > best_val {
                    best = l;
                    best_val = v;
                }
            }
            output.push(best_val);
            argmax.push(best);
        }
    }
    Ok(Pooled {
        output: Tensor::from_vec(&[out_len, channels], output)?,
        argmax,
    })
}

/// Routes each output gradient to its argmax row.
pub fn maxpool1d_backward<T: Real>(
    grad_out: &Tensor<T>,
    argmax: &[usize],
    input_len: usize,
) -> Result<Tensor<T>> {
    grad_out.expect_rank(2, "pool output gradient")?;
    if grad_out.len() != argmax.len() {
        return Err(Error::shape("pool gradient and argmax sizes differ"));
    }
    let channels = grad_out.shape()[1];
    let mut d_input = Tensor::zeros(&[input_len, channels]);
    for (i, (&g, &row)) in grad_out.data().iter().zip(argmax).enumerate() {
        d_input.data_mut()[row * channels + i % channels] += g;
    }
    Ok(d_input)
}
