//! LSTM cell with gate order (input, forget, candidate, output) and a
//! bidirectional scan over a valid prefix.

use super::{mat_vec_acc, outer_acc, sigmoid, vec_mat_acc, Real, Tensor};
use crate::error::{Error, Result};

/// `input_kernel` is `Din x 4H`, `recurrent_kernel` is `H x 4H`, `bias` is `4H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmWeights<T> {
    pub input_kernel: Tensor<T>,
    pub recurrent_kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LstmWeights<T> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        LstmWeights {
            input_kernel: Tensor::zeros(&[input_dim, 4 * units]),
            recurrent_kernel: Tensor::zeros(&[units, 4 * units]),
            bias: Tensor::zeros(&[4 * units]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_kernel.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.recurrent_kernel.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        self.input_kernel.expect_rank(2, "lstm input kernel")?;
        self.recurrent_kernel.expect_rank(2, "lstm recurrent kernel")?;
        self.bias.expect_rank(1, "lstm bias")?;
        let h = self.units();
        if self.recurrent_kernel.shape()[1] != 4 * h
            || self.input_kernel.shape()[1] != 4 * h
            || self.bias.shape()[0] != 4 * h
        {
            return Err(Error::shape(format!(
                "lstm tensors {:?}, {:?}, {:?} disagree on 4H with H = {h}",
                self.input_kernel.shape(),
                self.recurrent_kernel.shape(),
                self.bias.shape()
            )));
        }
        Ok(())
    }
}

/// Gradient buffers shaped like [`LstmWeights`].
pub type LstmGrads<T> = LstmWeights<T>;

/// Activated gates `[i, f, c̃, o]` plus the new cell and hidden states.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStep<T> {
    pub gates: Vec<T>,
    pub c: Vec<T>,
    pub h: Vec<T>,
    tanh_c: Vec<T>,
}

pub fn lstm_step<T: Real>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    weights: &LstmWeights<T>,
) -> Result<LstmStep<T>> {
    weights.validate()?;
    let h = weights.units();
    if x.len() != weights.input_dim() || h_prev.len() != h || c_prev.len() != h {
        return Err(Error::shape(format!(
            "lstm step got x[{}], h[{}], c[{}] for Din = {}, H = {h}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            weights.input_dim()
        )));
    }
    let mut pre = weights.bias.data().to_vec();
    vec_mat_acc(&mut pre, x, weights.input_kernel.data());
    Ok(step_from_preactivation(pre, h_prev, c_prev, weights))
}

fn step_from_preactivation<T: Real>(
    mut gates: Vec<T>,
    h_prev: &[T],
    c_prev: &[T],
    weights: &LstmWeights<T>,
) -> LstmStep<T> {
    let h = weights.units();
    vec_mat_acc(&mut gates, h_prev, weights.recurrent_kernel.data());
    for (j, z) in gates.iter_mut().enumerate() {
        *z = if (2 * h..3 * h).contains(&j) {
            z.tanh()
        } else {
            sigmoid(*z)
        };
    }
    let mut c = vec![T::zero(); h];
    let mut hidden = vec![T::zero(); h];
    let mut tanh_c = vec![T::zero(); h];
    for k in 0..h {
        let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
        c[k] = f * c_prev[k] + i * g;
        tanh_c[k] = c[k].tanh();
        hidden[k] = o * tanh_c[k];
    }
    LstmStep {
        gates,
        c,
        h: hidden,
        tanh_c,
    }
}

/// Backward through one step given upstream `dh`, `dc`. Accumulates weight
/// gradients into `grads`; returns `(dx, dh_prev, dc_prev)`.
#[allow(clippy::too_many_arguments)]
pub fn lstm_step_backward<T: Real>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    step: &LstmStep<T>,
    weights: &LstmWeights<T>,
    dh: &[T],
    dc: &[T],
    grads: &mut LstmGrads<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); x.len()];
    let (dh_prev, dc_prev) =
        step_backward_into(x, h_prev, c_prev, step, weights, dh, dc, grads, &mut dx);
    (dx, dh_prev, dc_prev)
}

#[allow(clippy::too_many_arguments)]
fn step_backward_into<T: Real>(
    x: &[T],
    h_prev: &[T],
    c_prev: &[T],
    step: &LstmStep<T>,
    weights: &LstmWeights<T>,
    dh: &[T],
    dc: &[T],
    grads: &mut LstmGrads<T>,
    dx: &mut [T],
) -> (Vec<T>, Vec<T>) {
    let h = weights.units();
    let one = T::one();
    let gates = &step.gates;
    let mut dz = vec![T::zero(); 4 * h];
    let mut dc_prev = vec![T::zero(); h];
    for k in 0..h {
        let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
        let tc = step.tanh_c[k];
        let dc_total = dc[k] + dh[k] * o * (one - tc * tc);
        dz[k] = dc_total * g * i * (one - i);
        dz[h + k] = dc_total * c_prev[k] * f * (one - f);
        dz[2 * h + k] = dc_total * i * (one - g * g);
        dz[3 * h + k] = dh[k] * tc * o * (one - o);
        dc_prev[k] = dc_total * f;
    }
    for (b, &d) in grads.bias.data_mut().iter_mut().zip(&dz) {
        *b += d;
    }
    outer_acc(grads.input_kernel.data_mut(), x, &dz);
    outer_acc(grads.recurrent_kernel.data_mut(), h_prev, &dz);
    mat_vec_acc(dx, weights.input_kernel.data(), &dz);
    let mut dh_prev = vec![T::zero(); h];
    mat_vec_acc(&mut dh_prev, weights.recurrent_kernel.data(), &dz);
    (dh_prev, dc_prev)
}

/// Output and per-direction step caches of a bidirectional scan.
#[derive(Clone, Debug, PartialEq)]
pub struct BiScan<T> {
    /// `w x 2H`: forward state then backward state, zeros past the valid prefix.
    pub output: Tensor<T>,
    pub forward: Vec<LstmStep<T>>,
    pub backward: Vec<LstmStep<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiScanGrads<T> {
    pub seq: Tensor<T>,
    pub forward: LstmGrads<T>,
    pub backward: LstmGrads<T>,
}

fn valid_prefix(mask: &[bool], w: usize) -> Result<usize> {
    if mask.len() != w {
        return Err(Error::shape(format!(
            "mask has {} entries for {w} positions",
            mask.len()
        )));
    }
    let n = mask.iter().take_while(|&&m| m).count();
    if mask[n..].iter().any(|&m| m) {
        return Err(Error::shape("mask must mark a contiguous valid prefix"));
    }
    Ok(n)
}

fn check_pair<T: Real>(din: usize, fwd: &LstmWeights<T>, bwd: &LstmWeights<T>) -> Result<()> {
    fwd.validate()?;
    bwd.validate()?;
    if fwd.input_dim() != din || bwd.input_dim() != din || fwd.units() != bwd.units() {
        return Err(Error::shape(format!(
            "scan input width {din} vs forward {}x{} and backward {}x{}",
            fwd.input_dim(),
            fwd.units(),
            bwd.input_dim(),
            bwd.units()
        )));
    }
    Ok(())
}

/// Left-to-right and right-to-left LSTM passes over the unmasked prefix of
/// `seq` (`w x Din`), concatenated per position.
pub fn bidirectional_scan<T: Real>(
    seq: &Tensor<T>,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
    mask: &[bool],
) -> Result<BiScan<T>> {
    seq.expect_rank(2, "scan input")?;
    let (w, din) = (seq.shape()[0], seq.shape()[1]);
    check_pair(din, fwd, bwd)?;
    let n = valid_prefix(mask, w)?;
    let (forward, backward) = scan_forward(&seq.data()[..n * din], n, fwd, bwd);
    let h = fwd.units();
    let mut output = Tensor::zeros(&[w, 2 * h]);
    for t in 0..n {
        let row = output.row_mut(t);
        row[..h].copy_from_slice(&forward[t].h);
        row[h..].copy_from_slice(&backward[t].h);
    }
    Ok(BiScan {
        output,
        forward,
        backward,
    })
}

/// Both directions over `n` rows of `seq`; `backward[t]` is the state at
/// position `t`. Shapes are the caller's responsibility.
pub(crate) fn scan_forward<T: Real>(
    seq: &[T],
    n: usize,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
) -> (Vec<LstmStep<T>>, Vec<LstmStep<T>>) {
    let din = fwd.input_dim();
    let h = fwd.units();
    let zeros = vec![T::zero(); h];
    let run = |weights: &LstmWeights<T>, order: &mut dyn Iterator<Item = usize>| {
        let mut steps: Vec<Option<LstmStep<T>>> = (0..n).map(|_| None).collect();
        let mut prev: Option<usize> = None;
        for t in order {
            let (hp, cp) = match prev {
                Some(p) => {
                    let s = steps[p].as_ref().expect("computed");
                    (&s.h[..], &s.c[..])
                }
                None => (&zeros[..], &zeros[..]),
            };
            let mut pre = weights.bias.data().to_vec();
            vec_mat_acc(&mut pre, &seq[t * din..(t + 1) * din], weights.input_kernel.data());
            let step = step_from_preactivation(pre, hp, cp, weights);
            steps[t] = Some(step);
            prev = Some(t);
        }
        steps.into_iter().map(|s| s.expect("every position visited")).collect::<Vec<_>>()
    };
    let forward = run(fwd, &mut (0..n));
    let backward = run(bwd, &mut (0..n).rev());
    (forward, backward)
}

pub fn bidirectional_scan_backward<T: Real>(
    seq: &Tensor<T>,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
    scan: &BiScan<T>,
    grad_out: &Tensor<T>,
) -> Result<BiScanGrads<T>> {
    seq.expect_rank(2, "scan input")?;
    let (w, din) = (seq.shape()[0], seq.shape()[1]);
    check_pair(din, fwd, bwd)?;
    let h = fwd.units();
    if grad_out.shape() != [w, 2 * h] {
        return Err(Error::shape(format!(
            "scan output gradient must be {:?}, got {:?}",
            [w, 2 * h],
            grad_out.shape()
        )));
    }
    let n = scan.forward.len();
    let mut grads = BiScanGrads {
        seq: Tensor::zeros(&[w, din]),
        forward: LstmWeights::zeros(din, h),
        backward: LstmWeights::zeros(din, h),
    };
    scan_backward_into(
        &seq.data()[..n * din],
        n,
        fwd,
        bwd,
        &scan.forward,
        &scan.backward,
        &grad_out.data()[..n * 2 * h],
        &mut grads.seq.data_mut()[..n * din],
        &mut grads.forward,
        &mut grads.backward,
    );
    Ok(grads)
}

/// Accumulates weight gradients and writes `d_seq` for the `n` valid rows.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_backward_into<T: Real>(
    seq: &[T],
    n: usize,
    fwd: &LstmWeights<T>,
    bwd: &LstmWeights<T>,
    fwd_steps: &[LstmStep<T>],
    bwd_steps: &[LstmStep<T>],
    grad_out: &[T],
    d_seq: &mut [T],
    fwd_grads: &mut LstmGrads<T>,
    bwd_grads: &mut LstmGrads<T>,
) {
    let din = fwd.input_dim();
    let h = fwd.units();
    let zeros = vec![T::zero(); h];

    let mut dh_next = vec![T::zero(); h];
    let mut dc_next = vec![T::zero(); h];
    for t in (0..n).rev() {
        let mut dh = grad_out[t * 2 * h..t * 2 * h + h].to_vec();
        for (a, &b) in dh.iter_mut().zip(&dh_next) {
            *a += b;
        }
        let (hp, cp) = if t > 0 {
            (&fwd_steps[t - 1].h[..], &fwd_steps[t - 1].c[..])
        } else {
            (&zeros[..], &zeros[..])
        };
        let x = &seq[t * din..(t + 1) * din];
        let dx = &mut d_seq[t * din..(t + 1) * din];
        let (dhp, dcp) =
            step_backward_into(x, hp, cp, &fwd_steps[t], fwd, &dh, &dc_next, fwd_grads, dx);
        dh_next = dhp;
        dc_next = dcp;
    }

    dh_next.fill(T::zero());
    dc_next.fill(T::zero());
    for t in 0..n {
        let mut dh = grad_out[t * 2 * h + h..(t + 1) * 2 * h].to_vec();
        for (a, &b) in dh.iter_mut().zip(&dh_next) {
            *a += b;
        }
        let (hp, cp) = if t + 1 < n {
            (&bwd_steps[t + 1].h[..], &bwd_steps[t + 1].c[..])
        } else {
            (&zeros[..], &zeros[..])
        };
        let x = &seq[t * din..(t + 1) * din];
        let dx = &mut d_seq[t * din..(t + 1) * din];
        let (dhp, dcp) =
            step_backward_into(x, hp, cp, &bwd_steps[t], bwd, &dh, &dc_next, bwd_grads, dx);
        dh_next = dhp;
        dc_next = dcp;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::numerics::testutil::{project, random};

    fn weights(din: usize, h: usize, seed: u64) -> LstmWeights<f64> {
        LstmWeights {
            input_kernel: random(&[din, 4 * h], seed),
            recurrent_kernel: random(&[h, 4 * h], seed + 1),
            bias: random(&[4 * h], seed + 2),
        }
    }

    /// Independent per-unit scalar LSTM.
    fn scalar_lstm(xs: &[Vec<f64>], w: &LstmWeights<f64>) -> Vec<Vec<f64>> {
        let h = w.units();
        let wi = |k: usize, j: usize| w.input_kernel.data()[k * 4 * h + j];
        let wr = |k: usize, j: usize| w.recurrent_kernel.data()[k * 4 * h + j];
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut out = Vec::new();
        for x in xs {
            let mut nh = vec![0.0; h];
            let mut nc = vec![0.0; h];
            for u in 0..h {
                let z = |gate: usize| {
                    let j = gate * h + u;
                    let mut s = w.bias.data()[j];
                    for (k, xk) in x.iter().enumerate() {
                        s += xk * wi(k, j);
                    }
                    for (k, hk) in hs.iter().enumerate() {
                        s += hk * wr(k, j);
                    }
                    s
                };
                let i = sig(z(0));
                let f = sig(z(1));
                let g = z(2).tanh();
                let o = sig(z(3));
                nc[u] = f * cs[u] + i * g;
                nh[u] = o * nc[u].tanh();
            }
            hs = nh;
            cs = nc;
            out.push(hs.clone());
        }
        out
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let w = LstmWeights::<f64>::zeros(3, 4);
        let step = lstm_step(&[0.3, -0.2, 0.9], &[0.0; 4], &[0.0; 4], &w).unwrap();
        assert!(step.gates.iter().take(4).all(|&g| g == 0.5));
        assert!(step.c.iter().all(|&c| c == 0.0));
        assert!(step.h.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn gates_in_unit_interval() {
        let w = weights(5, 6, 3);
        let step = lstm_step(&[3.0, -4.0, 2.0, 1.0, -1.0], &[0.5; 6], &[0.1; 6], &w).unwrap();
        let h = 6;
        for (j, &g) in step.gates.iter().enumerate() {
            if (2 * h..3 * h).contains(&j) {
                assert!((-1.0..=1.0).contains(&g));
            } else {
                assert!(g > 0.0 && g < 1.0);
            }
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let w = weights(3, 4, 11);
        let xs: Vec<Vec<f64>> = (0..3).map(|t| random(&[3], 50 + t).into_data()).collect();
        let expected = scalar_lstm(&xs, &w);
        let mut h = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        for (t, x) in xs.iter().enumerate() {
            let step = lstm_step(x, &h, &c, &w).unwrap();
            for (a, b) in step.h.iter().zip(&expected[t]) {
                assert!((a - b).abs() < 1e-10);
            }
            h = step.h;
            c = step.c;
        }
    }

    #[test]
    fn step_shape_errors() {
        let w = weights(3, 2, 0);
        assert!(lstm_step(&[0.0; 2], &[0.0; 2], &[0.0; 2], &w).is_err());
        assert!(lstm_step(&[0.0; 3], &[0.0; 3], &[0.0; 2], &w).is_err());
    }

    #[test]
    fn scan_widths_and_masking() {
        let (din, h) = (4, 200);
        let f = LstmWeights::<f64>::zeros(din, h);
        let b = LstmWeights::<f64>::zeros(din, h);
        let seq = random(&[3, din], 1);
        let scan = bidirectional_scan(&seq, &f, &b, &[true, true, false]).unwrap();
        assert_eq!(scan.output.shape(), &[3, 400]);
        assert!(scan.output.row(2).iter().all(|&v| v == 0.0));
        assert!(bidirectional_scan(&seq, &f, &b, &[true, false, true]).is_err());
    }

    #[test]
    fn single_token_sees_only_itself() {
        let f = weights(3, 2, 5);
        let b = weights(3, 2, 9);
        let seq = random(&[1, 3], 2);
        let scan = bidirectional_scan(&seq, &f, &b, &[true]).unwrap();
        let sf = lstm_step(seq.row(0), &[0.0; 2], &[0.0; 2], &f).unwrap();
        let sb = lstm_step(seq.row(0), &[0.0; 2], &[0.0; 2], &b).unwrap();
        assert_eq!(&scan.output.row(0)[..2], &sf.h[..]);
        assert_eq!(&scan.output.row(0)[2..], &sb.h[..]);
    }

    #[test]
    fn palindromic_symmetry() {
        let w = weights(3, 4, 21);
        let a = random(&[3], 7).into_data();
        let b = random(&[3], 8).into_data();
        let pal: Vec<f64> = [&a[..], &b[..], &b[..], &a[..]].concat();
        let seq = Tensor::from_vec(&[4, 3], pal).unwrap();
        let scan = bidirectional_scan(&seq, &w, &w, &[true; 4]).unwrap();
        for t in 0..4 {
            let mirror = 3 - t;
            assert_eq!(&scan.output.row(t)[..4], &scan.output.row(mirror)[4..]);
        }
    }

    #[test]
    fn step_gradient_matches_finite_differences() {
        let (din, h) = (3, 4);
        let w = weights(din, h, 31);
        let inputs = vec![
            random(&[din], 1),
            random(&[h], 2),
            random(&[h], 3),
            w.input_kernel.clone(),
            w.recurrent_kernel.clone(),
            w.bias.clone(),
        ];
        let probe_h = random(&[h], 4).into_data();
        let probe_c = random(&[h], 5).into_data();
        let unpack = |xs: &[Tensor<f64>]| LstmWeights {
            input_kernel: xs[3].clone(),
            recurrent_kernel: xs[4].clone(),
            bias: xs[5].clone(),
        };
        let result = grad_check(
            &inputs,
            1e-5,
            |xs| {
                let s = lstm_step(xs[0].data(), xs[1].data(), xs[2].data(), &unpack(xs)).unwrap();
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                dot(&s.h, &probe_h) + dot(&s.c, &probe_c)
            },
            |xs| {
                let w = unpack(xs);
                let s = lstm_step(xs[0].data(), xs[1].data(), xs[2].data(), &w).unwrap();
                let mut g = LstmWeights::zeros(din, h);
                let (dx, dh, dc) = lstm_step_backward(
                    xs[0].data(),
                    xs[1].data(),
                    xs[2].data(),
                    &s,
                    &w,
                    &probe_h,
                    &probe_c,
                    &mut g,
                );
                vec![
                    Tensor::from_vec(&[din], dx).unwrap(),
                    Tensor::from_vec(&[h], dh).unwrap(),
                    Tensor::from_vec(&[h], dc).unwrap(),
                    g.input_kernel,
                    g.recurrent_kernel,
                    g.bias,
                ]
            },
        );
        assert!(result.max_error < 1e-6, "{result:?}");
    }

    #[test]
    fn scan_gradient_matches_finite_differences() {
        let (din, h, w) = (3, 2, 5);
        let f = weights(din, h, 40);
        let b = weights(din, h, 50);
        let mask = [true, true, true, true, false];
        let probe = random(&[w, 2 * h], 60);
        let inputs = vec![
            random(&[w, din], 70),
            f.input_kernel.clone(),
            f.recurrent_kernel.clone(),
            f.bias.clone(),
            b.input_kernel.clone(),
            b.recurrent_kernel.clone(),
            b.bias.clone(),
        ];
        let unpack = |xs: &[Tensor<f64>]| {
            (
                LstmWeights {
                    input_kernel: xs[1].clone(),
                    recurrent_kernel: xs[2].clone(),
                    bias: xs[3].clone(),
                },
                LstmWeights {
                    input_kernel: xs[4].clone(),
                    recurrent_kernel: xs[5].clone(),
                    bias: xs[6].clone(),
                },
            )
        };
        let result = grad_check(
            &inputs,
            1e-5,
            |xs| {
                let (f, b) = unpack(xs);
                project(&bidirectional_scan(&xs[0], &f, &b, &mask).unwrap().output, &probe)
            },
            |xs| {
                let (f, b) = unpack(xs);
                let scan = bidirectional_scan(&xs[0], &f, &b, &mask).unwrap();
                let g = bidirectional_scan_backward(&xs[0], &f, &b, &scan, &probe).unwrap();
                vec![
                    g.seq,
                    g.forward.input_kernel,
                    g.forward.recurrent_kernel,
                    g.forward.bias,
                    g.backward.input_kernel,
                    g.backward.recurrent_kernel,
                    g.backward.bias,
                ]
            },
        );
        assert!(result.max_error < 1e-6, "{result:?}");
    }
}
