//! Dense kernels with hand-derived backward passes, generic over `f32`
//! (training) and `f64` (gradient checking).

mod batch_norm;
mod conv;
mod dense;
mod dropout;
mod gradcheck;
mod lstm;
mod pool;
mod softmax;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch_norm::{
    batch_norm_apply, batch_norm_backward, BatchNormCache, BatchNormGrads, BatchNormState,
    BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv1d_same, conv1d_same_backward, Conv1dGrads};
pub use dense::{dense, dense_backward, DenseGrads};
pub use dropout::{dropout_apply, Dropout};
pub use gradcheck::{grad_check, relative_error, GradCheckResult};
pub use lstm::{
    bidirectional_scan, bidirectional_scan_backward, lstm_step, lstm_step_backward, BiScan,
    BiScanGrads, LstmGrads, LstmStep, LstmWeights,
};
pub use pool::{maxpool1d, maxpool1d_backward, Pooled};
pub use softmax::{softmax_rows, softmax_xent};

pub(crate) use conv::{conv1d_same_backward_into, conv1d_same_into};
pub(crate) use lstm::{scan_backward_into, scan_forward};
pub(crate) use dropout::{apply_scale, dropout_in_place};
pub(crate) use softmax::softmax_xent_scaled;

/// Floating-point element type of every kernel.
pub trait Real:
    Float + NumAssign + FromPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Row-major dense tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a tensor viewed as `shape[0] x rest`.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.cols();
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let cols = self.cols();
        &mut self.data[i * cols..(i + 1) * cols]
    }

    fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| U::from_f64(x.to_f64().expect("real")).expect("representable"))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::shape(format!(
                "{what} must have rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `out += x · W` for row vector `x` and row-major `W` (`x.len() x out.len()`).
#[inline]
pub(crate) fn vec_mat_acc<T: Real>(out: &mut [T], x: &[T], w: &[T]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), x.len() * cols);
    for (k, &xk) in x.iter().enumerate() {
        if xk == T::zero() {
            continue;
        }
        let row = &w[k * cols..(k + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xk * wv;
        }
    }
}

/// `out[k] += W[k, :] · g` for row-major `W` (`out.len() x g.len()`).
#[inline]
pub(crate) fn mat_vec_acc<T: Real>(out: &mut [T], w: &[T], g: &[T]) {
    let cols = g.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (k, o) in out.iter_mut().enumerate() {
        let row = &w[k * cols..(k + 1) * cols];
        let mut acc = T::zero();
        for (&wv, &gv) in row.iter().zip(g) {
            acc += wv * gv;
        }
        *o += acc;
    }
}

/// `W += x ⊗ g`.
#[inline]
pub(crate) fn outer_acc<T: Real>(w: &mut [T], x: &[T], g: &[T]) {
    let cols = g.len();
    debug_assert_eq!(w.len(), x.len() * cols);
    for (k, &xk) in x.iter().enumerate() {
        if xk == T::zero() {
            continue;
        }
        let row = &mut w[k * cols..(k + 1) * cols];
        for (wv, &gv) in row.iter_mut().zip(g) {
            *wv += xk * gv;
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::Tensor;

    pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Scalarizes a tensor-valued kernel: `sum(out ⊙ probe)`.
    pub fn project(out: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
        out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn rows_and_cast() {
        let t = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.row(1), &[3.0, 4.0]);
        let f: Tensor<f32> = t.cast();
        assert_eq!(f.data(), &[1.0f32, 2.0, 3.0, 4.0]);
    }
}
