use super::{mat_vec_acc, outer_acc, vec_mat_acc, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "dense input")?;
    kernel.expect_rank(2, "dense kernel")?;
    let (n, din) = (input.shape()[0], input.shape()[1]);
    if kernel.shape()[0] != din {
        return Err(Error::shape(format!(
            "dense kernel {:?} for input width {din}",
            kernel.shape()
        )));
    }
    Ok((n, din, kernel.shape()[1]))
}

/// `(N x Din) · (Din x Dout) + bias`.
pub fn dense<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, _, dout) = check(input, kernel)?;
    if bias.shape() != [dout] {
        return Err(Error::shape(format!("dense bias {:?} for {dout} units", bias.shape())));
    }
    let mut out = Tensor::zeros(&[n, dout]);
    for r in 0..n {
        let row = out.row_mut(r);
        row.copy_from_slice(bias.data());
        vec_mat_acc(row, input.row(r), kernel.data());
    }
    Ok(out)
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, din, dout) = check(input, kernel)?;
    if grad_out.shape() != [n, dout] {
        return Err(Error::shape(format!(
            "dense output gradient {:?}, expected {:?}",
            grad_out.shape(),
            [n, dout]
        )));
    }
    let mut grads = DenseGrads {
        input: Tensor::zeros(&[n, din]),
        kernel: Tensor::zeros(&[din, dout]),
        bias: Tensor::zeros(&[dout]),
    };
    for r in 0..n {
        let g = grad_out.row(r);
        for (b, &gv) in grads.bias.data_mut().iter_mut().zip(g) {
            *b += gv;
        }
        outer_acc(grads.kernel.data_mut(), input.row(r), g);
        mat_vec_acc(grads.input.row_mut(r), kernel.data(), g);
    }
    Ok(grads)
}
