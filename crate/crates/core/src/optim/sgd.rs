use std::collections::BTreeMap;

use super::{ParamStore, TrainConfig};
use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// `p -= lr_e * g` with the epoch's learning rate from `cfg`.
pub fn sgd_step<T: Real, P: ParamStore<T> + ?Sized>(
    params: &mut P,
    grads: &BTreeMap<String, Tensor<T>>,
    epoch: usize,
    cfg: &TrainConfig,
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
    }
    let lr = T::of(cfg.sgd_lr_at(epoch));
    for (name, g) in grads {
        let p = params.param_mut(name).expect("checked above");
        for (v, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Decay;

    fn single(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::from_vec(&[1], vec![v]).unwrap())])
    }

    #[test]
    fn plain_step() {
        let mut p = single(1.0);
        let cfg = TrainConfig { sgd_lr: 0.04, ..TrainConfig::default() };
        sgd_step(&mut p, &single(0.5), 3, &cfg).unwrap();
        assert_eq!(p["p"].data()[0], 1.0 - 0.04 * 0.5);
        assert_eq!(p["p"].data()[0], 0.98);
    }

    #[test]
    fn scheduled_rate() {
        let cfg = TrainConfig { sgd_lr: 0.08, decay: Decay::Scheduled, ..TrainConfig::default() };
        assert_eq!(cfg.sgd_lr_at(0), 0.08);
        assert_eq!(cfg.sgd_lr_at(4), 0.08 / (1.0 + 0.05 * 4.0));
        let mut p = single(1.0);
        sgd_step(&mut p, &single(1.0), 4, &cfg).unwrap();
        assert_eq!(p["p"].data()[0], 1.0 - 0.08 / 1.2);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = single(1.0);
        let bad = BTreeMap::from([("p".to_string(), Tensor::<f64>::zeros(&[3]))]);
        assert!(sgd_step(&mut p, &bad, 0, &TrainConfig::default()).is_err());
    }
}
