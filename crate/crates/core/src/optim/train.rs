use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{nadam_step, sgd_step, NadamConfig, OptimizerState};
use crate::corpus::{make_batches, BatchOptions, TaggedCorpus};
use crate::error::{Error, Result};
use crate::eval::score;
use crate::network::Model;
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Nadam,
    Sgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    #[default]
    Constant,
    Scheduled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Shuffling and dropout seed. Not serialized: callers derive it from
    /// their own master seed.
    #[serde(skip)]
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub sgd_lr: f64,
    /// Learning-rate schedule for SGD; Nadam keeps its own schedule.
    pub decay: Decay,
    pub decay_rate: f64,
    pub nadam: NadamConfig,
    /// Group similar lengths into the same batch.
    pub bucket: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::Nadam,
            sgd_lr: 0.04,
            decay: Decay::Constant,
            decay_rate: 0.05,
            nadam: NadamConfig::default(),
            bucket: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.sgd_lr > 0.0 && self.sgd_lr.is_finite()) {
            return Err(Error::config("sgd_lr must be positive"));
        }
        if !(self.decay_rate >= 0.0 && self.decay_rate.is_finite()) {
            return Err(Error::config("decay_rate must be non-negative"));
        }
        self.nadam.validate()
    }

    /// `lr0` or `lr0 / (1 + κ·epoch)`, epochs counted from 0.
    pub fn sgd_lr_at(&self, epoch: usize) -> f64 {
        match self.decay {
            Decay::Constant => self.sgd_lr,
            Decay::Scheduled => self.sgd_lr / (1.0 + self.decay_rate * epoch as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Token-weighted mean training loss.
    pub loss: f64,
    pub dev_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn final_dev_f1(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.dev_f1)
    }
}

/// Optimizer state plus the epoch counter, so training can resume and the
/// state can be checkpointed.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub state: OptimizerState<f32>,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            state: OptimizerState::default(),
            epoch: 0,
        })
    }

    pub fn with_state(mut self, state: OptimizerState<f32>) -> Self {
        self.state = state;
        self
    }

    /// One reshuffled pass over `train`; returns the mean loss.
    pub fn train_epoch(&mut self, model: &mut Model<f32>, train: &TaggedCorpus) -> Result<f64> {
        check_scheme(model, train)?;
        let cfg = &self.config;
        let opts = BatchOptions {
            batch_size: cfg.batch_size,
            shuffle: true,
            bucket: cfg.bucket,
        };
        let epoch_seed = derive_seed(cfg.seed, self.epoch as u64);
        let batches = make_batches(train, model.vocab(), &opts, epoch_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, 1));
        let (mut weighted, mut tokens) = (0.0, 0usize);
        for batch in batches.iter().filter(|b| b.token_count() > 0) {
            let (loss, grads) = model.loss_and_grads(batch, &mut rng)?;
            weighted += loss * batch.token_count() as f64;
            tokens += batch.token_count();
            match cfg.optimizer {
                OptimizerKind::Nadam => nadam_step(&mut self.state, model.params_mut(), &grads, &cfg.nadam)?,
                OptimizerKind::Sgd => sgd_step(model.params_mut(), &grads, self.epoch, cfg)?,
            }
        }
        if tokens == 0 {
            return Err(Error::EmptyInput("training corpus has no tokens".into()));
        }
        self.epoch += 1;
        Ok(weighted / tokens as f64)
    }

    /// Runs `config.epochs` epochs, scoring `dev` after each when given.
    pub fn fit(&mut self, model: &mut Model<f32>, train: &TaggedCorpus, dev: Option<&TaggedCorpus>) -> Result<TrainHistory> {
        check_scheme(model, train)?;
        if let Some(dev) = dev {
            check_scheme(model, dev)?;
        }
        let mut history = TrainHistory::default();
        for _ in 0..self.config.epochs {
            let loss = self.train_epoch(model, train)?;
            let dev_f1 = match dev {
                Some(dev) => Some(score(dev, &model.predict_corpus(dev)?)?.micro_f1()),
                None => None,
            };
            log::debug!("epoch {} loss {loss:.6} dev {dev_f1:?}", self.epoch);
            history.epochs.push(EpochRecord {
                epoch: self.epoch,
                loss,
                dev_f1,
            });
        }
        Ok(history)
    }
}

fn check_scheme(model: &Model<f32>, corpus: &TaggedCorpus) -> Result<()> {
    if corpus.scheme() != model.scheme() {
        return Err(Error::SchemeMismatch(format!(
            "corpus categories {:?}, model categories {:?}",
            corpus.scheme().categories(),
            model.scheme().categories()
        )));
    }
    Ok(())
}

/// Trains from the model's current weights with fresh optimizer state.
pub fn fit(
    model: &mut Model<f32>,
    train: &TaggedCorpus,
    dev: Option<&TaggedCorpus>,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    Trainer::new(config.clone())?.fit(model, train, dev)
}
