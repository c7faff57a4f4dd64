use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NadamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub schedule_decay: f64,
}

impl Default for NadamConfig {
    fn default() -> Self {
        NadamConfig {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            schedule_decay: 0.004,
        }
    }
}

impl NadamConfig {
    /// `beta1 = 0` and `schedule_decay = 0` are accepted so the update can
    /// degenerate to its momentum-free form.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.schedule_decay >= 0.0
            && [self.lr, self.epsilon, self.schedule_decay].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid nadam settings {self:?}")))
        }
    }

    fn momentum(&self, t: u64) -> f64 {
        self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t as f64 * self.schedule_decay))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Per-tensor moments, created on a tensor's first gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub moments: BTreeMap<String, Moments<T>>,
    pub t: u64,
    /// Running product of the momentum schedule.
    pub mu_product: f64,
}

impl<T> Default for OptimizerState<T> {
    fn default() -> Self {
        OptimizerState {
            moments: BTreeMap::new(),
            t: 0,
            mu_product: 1.0,
        }
    }
}

/// One Nadam update of every tensor named in `grads`.
pub fn nadam_step<T: Real, P: ParamStore<T> + ?Sized>(
    state: &mut OptimizerState<T>,
    params: &mut P,
    grads: &BTreeMap<String, Tensor<T>>,
    cfg: &NadamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .param_mut(name)
            .ok_or_else(|| Error::shape(format!("gradient for unknown tensor `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient for `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if let Some(mo) = state.moments.get(name) {
            if mo.m.shape() != g.shape() {
                return Err(Error::shape(format!("optimizer moments for `{name}` have the wrong shape")));
            }
        }
    }
    state.t += 1;
    let t = state.t;
    let mu_t = cfg.momentum(t);
    let mu_next = cfg.momentum(t + 1);
    let prod = state.mu_product * mu_t;
    let prod_next = prod * mu_next;
    state.mu_product = prod;

    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let g_scale = T::of(1.0 / (1.0 - prod));
    let m_scale = T::of(1.0 / (1.0 - prod_next));
    let v_scale = T::of(1.0 / (1.0 - cfg.beta2.powf(t as f64)));
    let c_g = T::of(1.0 - mu_t);
    let c_m = T::of(mu_next);
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.epsilon);
    for (name, g) in grads {
        let p = params.param_mut(name).expect("checked above");
        let mo = state.moments.entry(name.clone()).or_insert_with(|| Moments {
            m: Tensor::zeros(g.shape()),
            v: Tensor::zeros(g.shape()),
        });
        let pd = p.data_mut();
        let (md, vd) = (mo.m.data_mut(), mo.v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (T::one() - b1) * gi;
            vd[i] = b2 * vd[i] + (T::one() - b2) * gi * gi;
            let g_hat = gi * g_scale;
            let m_hat = md[i] * m_scale;
            let v_hat = vd[i] * v_scale;
            let m_bar = c_g * g_hat + c_m * m_hat;
            pd[i] -= lr * m_bar / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight transcription of the update for one scalar.
    struct Scalar {
        m: f64,
        v: f64,
        t: u64,
        prod: f64,
    }

    impl Scalar {
        fn step(&mut self, p: f64, g: f64, c: &NadamConfig) -> f64 {
            self.t += 1;
            let t = self.t as f64;
            let mu = c.beta1 * (1.0 - 0.5 * 0.96f64.powf(t * c.schedule_decay));
            let mu1 = c.beta1 * (1.0 - 0.5 * 0.96f64.powf((t + 1.0) * c.schedule_decay));
            self.prod *= mu;
            let g_hat = g / (1.0 - self.prod);
            self.m = c.beta1 * self.m + (1.0 - c.beta1) * g;
            let m_hat = self.m / (1.0 - self.prod * mu1);
            self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g;
            let v_hat = self.v / (1.0 - c.beta2.powf(t));
            let m_bar = (1.0 - mu) * g_hat + mu1 * m_hat;
            p - c.lr * m_bar / (v_hat.sqrt() + c.epsilon)
        }
    }

    fn single(p: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::from_vec(&[1], vec![p]).unwrap())])
    }

    fn run_quadratic(cfg: &NadamConfig) {
        let mut params = single(1.0);
        let mut state = OptimizerState::default();
        let mut oracle = Scalar { m: 0.0, v: 0.0, t: 0, prod: 1.0 };
        let mut expected = 1.0;
        for step in 1..=10 {
            let p = params["p"].data()[0];
            let grads = single(2.0 * p);
            nadam_step(&mut state, &mut params, &grads, cfg).unwrap();
            expected = oracle.step(expected, 2.0 * expected, cfg);
            assert_eq!(state.t, step);
            assert!((params["p"].data()[0] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_scalar_transcription() {
        run_quadratic(&NadamConfig::default());
        run_quadratic(&NadamConfig { lr: 0.1, ..NadamConfig::default() });
    }

    #[test]
    fn without_momentum_reduces_to_bias_corrected_rms_step() {
        let cfg = NadamConfig { beta1: 0.0, schedule_decay: 0.0, ..NadamConfig::default() };
        let mut params = single(1.0);
        let mut state = OptimizerState::default();
        let mut v = 0.0;
        let mut p = 1.0;
        for t in 1..=5 {
            let g = 2.0 * p;
            nadam_step(&mut state, &mut params, &single(g), &cfg).unwrap();
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let v_hat = v / (1.0 - cfg.beta2.powi(t));
            p -= cfg.lr * g / (v_hat.sqrt() + cfg.epsilon);
            assert!((params["p"].data()[0] - p).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = single(0.75);
        let mut state = OptimizerState::default();
        for _ in 0..3 {
            nadam_step(&mut state, &mut params, &single(0.0), &NadamConfig::default()).unwrap();
        }
        assert_eq!(params["p"].data()[0], 0.75);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn shape_and_name_errors() {
        let mut params = single(1.0);
        let mut state = OptimizerState::<f64>::default();
        let bad = BTreeMap::from([("p".to_string(), Tensor::zeros(&[2]))]);
        assert!(nadam_step(&mut state, &mut params, &bad, &NadamConfig::default()).is_err());
        let unknown = BTreeMap::from([("q".to_string(), Tensor::zeros(&[1]))]);
        assert!(nadam_step(&mut state, &mut params, &unknown, &NadamConfig::default()).is_err());
        assert_eq!(state.t, 0);
    }

    #[test]
    fn config_bounds() {
        assert!(NadamConfig::default().validate().is_ok());
        assert!(NadamConfig { beta2: 1.0, ..NadamConfig::default() }.validate().is_err());
        assert!(NadamConfig { lr: 0.0, ..NadamConfig::default() }.validate().is_err());
        assert!(NadamConfig { beta1: 0.0, schedule_decay: 0.0, ..NadamConfig::default() }
            .validate()
            .is_ok());
    }
}
