//! Parameter updates and the epoch loop.

mod nadam;
mod sgd;
mod train;

use std::collections::BTreeMap;

use crate::network::ModelParams;
use crate::numerics::{Real, Tensor};

pub use nadam::{nadam_step, Moments, NadamConfig, OptimizerState};
pub use sgd::sgd_step;
pub use train::{fit, Decay, EpochRecord, OptimizerKind, TrainConfig, TrainHistory, Trainer};

/// Anything that can look parameters up by name.
pub trait ParamStore<T> {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>>;
}

impl<T: Real> ParamStore<T> for ModelParams<T> {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.get_mut(name)
    }
}

impl<T> ParamStore<T> for BTreeMap<String, Tensor<T>> {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.get_mut(name)
    }
}
