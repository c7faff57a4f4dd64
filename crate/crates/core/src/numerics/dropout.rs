use rand::Rng;

use super::{Mode, Real, Tensor};

/// Inverted-dropout output plus the per-unit scale used for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct Dropout<T> {
    pub output: Tensor<T>,
    /// Empty when the layer acted as identity.
    scale: Vec<T>,
}

impl<T: Real> Dropout<T> {
    pub fn backward(&self, grad_out: &Tensor<T>) -> Tensor<T> {
        let mut g = grad_out.clone();
        apply_scale(g.data_mut(), &self.scale);
        g
    }

    pub fn is_identity(&self) -> bool {
        self.scale.is_empty()
    }
}

/// Train mode zeroes each unit with probability `rate` and scales survivors
/// by `1 / (1 - rate)`. Infer mode, or `rate == 0`, is identity and draws
/// nothing from `rng`.
pub fn dropout_apply<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Dropout<T> {
    let mut output = input.clone();
    let scale = dropout_in_place(output.data_mut(), rate, mode, rng);
    Dropout { output, scale }
}

pub(crate) fn dropout_in_place<T: Real, R: Rng + ?Sized>(
    values: &mut [T],
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Vec<T> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if mode == Mode::Infer || rate == 0.0 {
        return Vec::new();
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let scale: Vec<T> = values
        .iter()
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    apply_scale(values, &scale);
    scale
}

pub(crate) fn apply_scale<T: Real>(values: &mut [T], scale: &[T]) {
    if scale.is_empty() {
        return;
    }
    for (v, &s) in values.iter_mut().zip(scale) {
        *v *= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::testutil::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_zero_and_infer_are_identity() {
        let x = random(&[4, 5], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(dropout_apply(&x, 0.0, Mode::Train, &mut rng).output, x);
        assert_eq!(dropout_apply(&x, 0.0, Mode::Infer, &mut rng).output, x);
        assert_eq!(dropout_apply(&x, 0.5, Mode::Infer, &mut rng).output, x);
    }

    #[test]
    fn inverted_scaling_preserves_mean() {
        let x = Tensor::<f64>::from_fn(&[100_000], |i| 1.0 + (i % 7) as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = dropout_apply(&x, 0.5, Mode::Train, &mut rng).output;
        let mean_in: f64 = x.data().iter().sum::<f64>() / 1e5;
        let mean_out: f64 = out.data().iter().sum::<f64>() / 1e5;
        assert!(((mean_out - mean_in) / mean_in).abs() < 0.02);
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count();
        assert!((zeros as f64 / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn deterministic_per_rng_state_and_backward_uses_mask() {
        let x = random(&[64], 2);
        let a = dropout_apply(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9));
        let b = dropout_apply(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let ones = Tensor::from_fn(&[64], |_| 1.0);
        let g = a.backward(&ones);
        for (gv, (&o, &i)) in g.data().iter().zip(a.output.data().iter().zip(x.data())) {
            assert!((gv * i - o).abs() < 1e-12);
        }
    }
}
