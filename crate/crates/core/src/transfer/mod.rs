//! Checkpoints and layer-wise transfer between tagging tasks.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};

use crate::corpus::{EncodeOptions, LabelScheme, TaggedCorpus};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::network::{init_model, is_blstm_tensor, is_output_tensor, Model, NetworkConfig};
use crate::optim::{TrainConfig, TrainHistory, Trainer};
use crate::seed::derive_seed;

/// Which pretrained layers a fresh model receives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    #[default]
    All,
    BlstmOnly,
    AllButBlstm,
}

impl InitStrategy {
    pub const ALL: [InitStrategy; 3] = [InitStrategy::All, InitStrategy::BlstmOnly, InitStrategy::AllButBlstm];

    pub fn as_str(self) -> &'static str {
        match self {
            InitStrategy::All => "all",
            InitStrategy::BlstmOnly => "blstm-only",
            InitStrategy::AllButBlstm => "all-but-blstm",
        }
    }

    /// Whether tensor `name` is taken from the checkpoint. The output layer
    /// needs an identical label scheme and the word table an identical
    /// vocabulary.
    pub fn selects(self, name: &str, same_scheme: bool, same_vocab: bool) -> bool {
        if is_blstm_tensor(name) {
            return self != InitStrategy::AllButBlstm;
        }
        if self == InitStrategy::BlstmOnly {
            return false;
        }
        if is_output_tensor(name) {
            return same_scheme;
        }
        if name == "word_embed" {
            return same_vocab;
        }
        true
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitStrategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown init strategy `{s}`")))
    }
}

/// Copies the tensors `strategy` selects from `ckpt` into a copy of
/// `target`. Every tensor the two architectures share must agree in shape,
/// except the word table and the output layer, which may legitimately
/// differ across tasks.
pub fn apply_init_strategy(target: &Model<f32>, ckpt: &Checkpoint, strategy: InitStrategy) -> Result<Model<f32>> {
    let same_scheme = ckpt.scheme == *target.scheme();
    let same_vocab = ckpt.vocab.fingerprint() == target.vocab().fingerprint();
    let mut params = target.params().clone();
    let mut mismatched = Vec::new();
    for (name, dst) in params.named_mut() {
        let Some(src) = ckpt.params.get(name) else {
            continue;
        };
        let copy = strategy.selects(name, same_scheme, same_vocab);
        let may_differ = (is_output_tensor(name) && !same_scheme) || (name == "word_embed" && !same_vocab);
        if src.shape() != dst.shape() {
            if copy || !may_differ {
                mismatched.push(format!("{name} ({:?} vs {:?})", src.shape(), dst.shape()));
            }
            continue;
        }
        if copy {
            *dst = src.clone();
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::Incompatible(mismatched));
    }
    let mut model = Model::new(target.config().clone(), params, target.vocab().clone(), target.scheme().clone())?;
    model.set_exec(target.exec());
    Ok(model)
}

/// A randomly initialized model for `scheme`, sized from it.
pub fn fresh_model(
    network: &NetworkConfig,
    emb: &EmbeddingMatrix,
    options: EncodeOptions,
    scheme: &LabelScheme,
    seed: u64,
) -> Result<Model<f32>> {
    let config = NetworkConfig {
        n_tags: scheme.n_tags(),
        ..network.clone()
    };
    let params = init_model(&config, emb, seed)?;
    Model::new(config, params, emb.vocab(options), scheme.clone())
}

/// One dataset of a sequential pre-training run.
#[derive(Clone, Debug)]
pub struct Stage {
    pub corpus: TaggedCorpus,
    pub dev: Option<TaggedCorpus>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

/// Trains on each stage in order. The first stage starts from random
/// weights; each later one starts from its predecessor through
/// [`InitStrategy::All`] with a fresh optimizer. Stage `i` uses
/// `derive_seed(seed, i)` for initialization and a seed derived from that
/// for shuffling and dropout, overriding `train.seed`.
pub fn sequential_pretrain(
    stages: &[Stage],
    emb: &EmbeddingMatrix,
    options: EncodeOptions,
    seed: u64,
) -> Result<(Checkpoint, Vec<TrainHistory>)> {
    if stages.is_empty() {
        return Err(Error::EmptyInput("sequential pre-training needs at least one dataset".into()));
    }
    let mut previous: Option<Checkpoint> = None;
    let mut histories = Vec::with_capacity(stages.len());
    for (i, stage) in stages.iter().enumerate() {
        let stage_seed = derive_seed(seed, i as u64);
        let mut model = fresh_model(&stage.network, emb, options, stage.corpus.scheme(), stage_seed)?;
        if let Some(prev) = &previous {
            model = apply_init_strategy(&model, prev, InitStrategy::All)?;
        }
        let train = TrainConfig {
            seed: derive_seed(stage_seed, 1),
            ..stage.train.clone()
        };
        let mut trainer = Trainer::new(train)?;
        let history = trainer.fit(&mut model, &stage.corpus, stage.dev.as_ref())?;
        log::info!("stage {} finished after {} epochs", i + 1, history.len());
        histories.push(history);
        previous = Some(Checkpoint::from_model(&model, Some(&trainer.state)));
    }
    Ok((previous.expect("at least one stage"), histories))
}
