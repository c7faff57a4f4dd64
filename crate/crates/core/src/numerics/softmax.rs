use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_rank(2, "logits")?;
    let mut out = logits.clone();
    let rows = out.shape()[0];
    for r in 0..rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy over unmasked rows and its gradient
/// `(softmax - onehot) / count` (zero on masked rows).
pub fn softmax_xent<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    mask: &[bool],
) -> Result<(T, Tensor<T>)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::shape("every position is masked"));
    }
    softmax_xent_scaled(logits, targets, mask, count)
}

/// Like [`softmax_xent`] but divides by `denominator` instead of the local
/// unmasked count, so per-sentence pieces sum to a batch mean.
pub(crate) fn softmax_xent_scaled<T: Real>(
    logits: &Tensor<T>,
    targets: &[usize],
    mask: &[bool],
    denominator: usize,
) -> Result<(T, Tensor<T>)> {
    logits.expect_rank(2, "logits")?;
    let (rows, k) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != rows || mask.len() != rows {
        return Err(Error::shape(format!(
            "{rows} logit rows but {} targets and {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    let scale = T::one() / T::from_usize(denominator).expect("count");
    let mut grad = Tensor::zeros(&[rows, k]);
    let mut loss = T::zero();
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        let target = targets[r];
        if target >= k {
            return Err(Error::shape(format!("target {target} outside {k} classes")));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_sum = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += log_sum - (row[target] - max);
        let g = grad.row_mut(r);
        for (j, gv) in g.iter_mut().enumerate() {
            *gv = (row[j] - max - log_sum).exp() * scale;
        }
        g[target] -= scale;
    }
    Ok((loss * scale, grad))
}
