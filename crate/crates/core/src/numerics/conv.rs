use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1dGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_shapes<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    input.expect_rank(2, "conv input")?;
    kernels.expect_rank(3, "conv kernels")?;
    bias.expect_rank(1, "conv bias")?;
    let (len, cin) = (input.shape()[0], input.shape()[1]);
    let (width, kcin, cout) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if width % 2 == 0 {
        return Err(Error::shape(format!("kernel width {width} must be odd")));
    }
    if kcin != cin {
        return Err(Error::shape(format!(
            "kernels expect {kcin} input channels, input has {cin}"
        )));
    }
    if bias.shape()[0] != cout {
        return Err(Error::shape(format!(
            "bias has {} entries for {cout} output channels",
            bias.shape()[0]
        )));
    }
    Ok((len, cin, width, cout))
}

/// Zero-padded convolution preserving length: `(L x Cin) * (K x Cin x Cout) -> (L x Cout)`.
pub fn conv1d_same<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (len, cin, width, cout) = check_shapes(input, kernels, bias)?;
    let mut out = vec![T::zero(); len * cout];
    conv1d_same_into(input.data(), len, cin, kernels.data(), width, cout, bias.data(), &mut out);
    Tensor::from_vec(&[len, cout], out)
}

pub fn conv1d_same_backward<T: Real>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<Conv1dGrads<T>> {
    let cout = kernels.shape().get(2).copied().unwrap_or(0);
    let (len, cin, width, cout) =
        check_shapes(input, kernels, &Tensor::zeros(&[cout]))?;
    if grad_out.shape() != [len, cout] {
        return Err(Error::shape(format!(
            "conv output gradient must be {:?}, got {:?}",
            [len, cout],
            grad_out.shape()
        )));
    }
    let mut d_input = vec![T::zero(); len * cin];
    let mut d_kernels = vec![T::zero(); width * cin * cout];
    let mut d_bias = vec![T::zero(); cout];
    conv1d_same_backward_into(
        input.data(),
        len,
        cin,
        kernels.data(),
        width,
        cout,
        grad_out.data(),
        Some(&mut d_input),
        &mut d_kernels,
        &mut d_bias,
    );
    Ok(Conv1dGrads {
        input: Tensor::from_vec(&[len, cin], d_input)?,
        kernels: Tensor::from_vec(&[width, cin, cout], d_kernels)?,
        bias: Tensor::from_vec(&[cout], d_bias)?,
    })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_same_into<T: Real>(
    input: &[T],
    len: usize,
    cin: usize,
    kernels: &[T],
    width: usize,
    cout: usize,
    bias: &[T],
    out: &mut [T],
) {
    let half = width / 2;
    for l in 0..len {
        let row = &mut out[l * cout..(l + 1) * cout];
        row.copy_from_slice(bias);
        for k in 0..width {
            let Some(src) = (l + k).checked_sub(half).filter(|&s| s < len) else {
                continue;
            };
            let x = &input[src * cin..(src + 1) * cin];
            let w = &kernels[k * cin * cout..(k + 1) * cin * cout];
            super::vec_mat_acc(row, x, w);
        }
    }
}

/// Accumulates into the gradient buffers; `d_input` may be skipped.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_same_backward_into<T: Real>(
    input: &[T],
    len: usize,
    cin: usize,
    kernels: &[T],
    width: usize,
    cout: usize,
    grad_out: &[T],
    mut d_input: Option<&mut [T]>,
    d_kernels: &mut [T],
    d_bias: &mut [T],
) {
    let half = width / 2;
    for l in 0..len {
        let g = &grad_out[l * cout..(l + 1) * cout];
        if g.iter().all(|&v| v == T::zero()) {
            continue;
        }
        for (db, &gv) in d_bias.iter_mut().zip(g) {
            *db += gv;
        }
        for k in 0..width {
            let Some(src) = (l + k).checked_sub(half).filter(|&s| s < len) else {
                continue;
            };
            let x = &input[src * cin..(src + 1) * cin];
            let range = k * cin * cout..(k + 1) * cin * cout;
            super::outer_acc(&mut d_kernels[range.clone()], x, g);
            if let Some(dx) = d_input.as_deref_mut() {
                super::mat_vec_acc(&mut dx[src * cin..(src + 1) * cin], &kernels[range], g);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::numerics::testutil::{project, random};

    #[test]
    fn hand_convolution() {
        let input = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let kernels = Tensor::from_vec(&[3, 1, 1], vec![1.0, 1.0, 1.0]).unwrap();
        let bias = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let out = conv1d_same(&input, &kernels, &bias).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn preserves_length_52() {
        let input = random(&[52, 30], 1);
        let out = conv1d_same(&input, &random(&[3, 30, 30], 2), &random(&[30], 3)).unwrap();
        assert_eq!(out.shape(), &[52, 30]);
    }

    #[test]
    fn zero_kernels_broadcast_bias() {
        let bias = Tensor::from_vec(&[2], vec![0.5, -1.5]).unwrap();
        let out = conv1d_same(&random(&[4, 3], 1), &Tensor::zeros(&[3, 3, 2]), &bias).unwrap();
        for l in 0..4 {
            assert_eq!(out.row(l), &[0.5, -1.5]);
        }
    }

    #[test]
    fn identity_kernel_is_identity() {
        let c = 4;
        let mut kernels = Tensor::<f64>::zeros(&[3, c, c]);
        for i in 0..c {
            kernels.data_mut()[(c + i) * c + i] = 1.0;
        }
        let input = random(&[7, c], 5);
        let out = conv1d_same(&input, &kernels, &Tensor::zeros(&[c])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn shape_errors() {
        let x = random(&[4, 3], 1);
        assert!(conv1d_same(&x, &random(&[2, 3, 2], 2), &random(&[2], 3)).is_err());
        assert!(conv1d_same(&x, &random(&[3, 2, 2], 2), &random(&[2], 3)).is_err());
        assert!(conv1d_same(&x, &random(&[3, 3, 2], 2), &random(&[3], 3)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (len, cin, cout, width) = (3 + seed as usize, 2, 3, [1, 3, 5][seed as usize % 3]);
            let inputs = vec![
                random(&[len, cin], seed),
                random(&[width, cin, cout], seed + 100),
                random(&[cout], seed + 200),
            ];
            let probe = random(&[len, cout], seed + 300);
            let result = grad_check(
                &inputs,
                1e-5,
                |xs| project(&conv1d_same(&xs[0], &xs[1], &xs[2]).unwrap(), &probe),
                |xs| {
                    let g = conv1d_same_backward(&xs[0], &xs[1], &probe).unwrap();
                    vec![g.input, g.kernels, g.bias]
                },
            );
            assert!(result.max_error < 1e-6, "seed {seed}: {result:?}");
        }
    }
}
