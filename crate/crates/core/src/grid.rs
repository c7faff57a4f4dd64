//! Cartesian hyperparameter search over independent training runs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::TaggedCorpus;
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::score;
use crate::exec::{map_items, with_jobs, ExecMode};
use crate::network::NetworkConfig;
use crate::optim::{Decay, OptimizerKind, TrainConfig, TrainHistory, Trainer};
use crate::seed::derive_seed;
use crate::transfer::{apply_init_strategy, fresh_model, load_checkpoint, Checkpoint, InitStrategy};

/// Pretrain axis value meaning "random initialization".
pub const NO_PRETRAIN: &str = "none";

/// Axes to search. An absent axis keeps the base configuration's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub optimizer: Option<Vec<OptimizerKind>>,
    /// Checkpoint paths, or `"none"` for random initialization.
    pub pretrain: Option<Vec<String>>,
    pub sgd_lr: Option<Vec<f64>>,
    pub batch_norm: Option<Vec<bool>>,
    pub trainable_embeddings: Option<Vec<bool>>,
    pub decay: Option<Vec<Decay>>,
}

/// One axis setting of a trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum AxisValue {
    Optimizer(OptimizerKind),
    Pretrain(String),
    Lr(f64),
    Flag(bool),
    Decay(Decay),
}

impl AxisValue {
    fn text(&self) -> String {
        match self {
            AxisValue::Optimizer(OptimizerKind::Nadam) => "nadam".into(),
            AxisValue::Optimizer(OptimizerKind::Sgd) => "sgd".into(),
            AxisValue::Pretrain(p) => p.clone(),
            AxisValue::Lr(x) => x.to_string(),
            AxisValue::Flag(b) => if *b { "on" } else { "off" }.into(),
            AxisValue::Decay(Decay::Constant) => "constant".into(),
            AxisValue::Decay(Decay::Scheduled) => "scheduled".into(),
        }
    }
}

impl GridSpec {
    fn axes(&self) -> Vec<(&'static str, Vec<AxisValue>)> {
        fn axis<T: Clone>(out: &mut Vec<(&'static str, Vec<AxisValue>)>, name: &'static str, v: &Option<Vec<T>>, f: fn(T) -> AxisValue) {
            if let Some(v) = v {
                out.push((name, v.iter().cloned().map(f).collect()));
            }
        }
        let mut out = Vec::new();
        axis(&mut out, "optimizer", &self.optimizer, AxisValue::Optimizer);
        axis(&mut out, "pretrain", &self.pretrain, AxisValue::Pretrain);
        axis(&mut out, "sgd_lr", &self.sgd_lr, AxisValue::Lr);
        axis(&mut out, "batch_norm", &self.batch_norm, AxisValue::Flag);
        axis(&mut out, "trainable_embeddings", &self.trainable_embeddings, AxisValue::Flag);
        axis(&mut out, "decay", &self.decay, AxisValue::Decay);
        out
    }

    /// Names of the axes that are present, in product order.
    pub fn axis_names(&self) -> Vec<&'static str> {
        self.axes().into_iter().map(|(n, _)| n).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, values) in self.axes() {
            if values.is_empty() {
                return Err(Error::config(format!("grid axis `{name}` is empty")));
            }
            let texts: Vec<String> = values.iter().map(AxisValue::text).collect();
            for (i, t) in texts.iter().enumerate() {
                if texts[..i].contains(t) {
                    return Err(Error::config(format!("grid axis `{name}` repeats `{t}`")));
                }
            }
        }
        if let Some(lrs) = &self.sgd_lr {
            if lrs.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::config("grid learning rates must be positive"));
            }
        }
        Ok(())
    }

    /// Number of cells: the product of the axis sizes.
    pub fn cell_count(&self) -> usize {
        self.axes().iter().map(|(_, v)| v.len()).product()
    }

    /// Every cell as `(axis, value)` pairs; the last axis varies fastest.
    fn cells(&self) -> Vec<Vec<(&'static str, AxisValue)>> {
        let mut cells = vec![Vec::new()];
        for (name, values) in self.axes() {
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |v| {
                        let mut c = cell.clone();
                        c.push((name, v.clone()));
                        c
                    })
                })
                .collect();
        }
        cells
    }
}

/// The settings one trial actually trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub init_strategy: InitStrategy,
    pub pretrain: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Unique within one grid: the cell's axis settings plus the repeat.
    pub label: String,
    pub cell: String,
    pub axes: BTreeMap<String, String>,
    pub repeat: usize,
    pub seed: u64,
    pub config: TrialConfig,
    /// Final dev micro F1, or `None` if the trial failed.
    pub f1: Option<f64>,
    pub error: Option<String>,
    pub history: TrainHistory,
    /// Kept out of serialized results so reruns compare byte-equal.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Everything a grid trains against.
pub struct GridData<'a> {
    pub train: &'a TaggedCorpus,
    pub dev: &'a TaggedCorpus,
    pub embeddings: &'a EmbeddingMatrix,
}

/// Trains every cell `base.repeats` times and returns the records sorted by
/// F1, best first; failed trials sort last. Trial `i` (cells in product
/// order, repeats innermost) uses `derive_seed(derive_seed(base.seed, 3), i)`.
/// Up to `base.jobs` trials run at once; results do not depend on it.
pub fn run_grid(grid: &GridSpec, base: &RunConfig, data: &GridData<'_>) -> Result<Vec<ExperimentRecord>> {
    grid.validate()?;
    base.validate()?;
    let mut checkpoints: BTreeMap<String, std::result::Result<Checkpoint, String>> = BTreeMap::new();
    for p in grid.pretrain.iter().flatten().filter(|p| *p != NO_PRETRAIN) {
        checkpoints.insert(p.clone(), load_checkpoint(Path::new(p)).map_err(|e| e.to_string()));
    }

    let grid_seed = derive_seed(base.seed, 3);
    let mut trials = Vec::new();
    for cell in grid.cells() {
        for repeat in 0..base.repeats {
            let index = trials.len() as u64;
            trials.push((cell.clone(), repeat, derive_seed(grid_seed, index)));
        }
    }
    let mode = if base.jobs > 1 { ExecMode::Parallel } else { ExecMode::Sequential };
    let mut records = with_jobs(base.jobs, || {
        map_items(mode, trials, |(cell, repeat, seed)| run_trial(&cell, repeat, seed, base, data, &checkpoints))
    });
    records.sort_by(|a, b| match (a.f1, b.f1) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    Ok(records)
}

fn run_trial(
    cell: &[(&'static str, AxisValue)],
    repeat: usize,
    seed: u64,
    base: &RunConfig,
    data: &GridData<'_>,
    checkpoints: &BTreeMap<String, std::result::Result<Checkpoint, String>>,
) -> ExperimentRecord {
    let mut network = base.network.clone();
    let mut train = TrainConfig {
        seed: derive_seed(seed, 1),
        ..base.train.clone()
    };
    let mut pretrain = None;
    for (name, value) in cell {
        match (*name, value) {
            ("optimizer", AxisValue::Optimizer(o)) => train.optimizer = *o,
            ("pretrain", AxisValue::Pretrain(p)) => pretrain = (p != NO_PRETRAIN).then(|| p.clone()),
            ("sgd_lr", AxisValue::Lr(x)) => train.sgd_lr = *x,
            ("batch_norm", AxisValue::Flag(b)) => network.batch_norm = *b,
            ("trainable_embeddings", AxisValue::Flag(b)) => network.trainable_embeddings = *b,
            ("decay", AxisValue::Decay(d)) => train.decay = *d,
            _ => unreachable!("axis {name} with value {value:?}"),
        }
    }
    network.n_tags = data.train.scheme().n_tags();
    let cell_label = if cell.is_empty() {
        "base".to_string()
    } else {
        cell.iter().map(|(n, v)| format!("{n}={}", v.text())).collect::<Vec<_>>().join(" ")
    };
    let label = if base.repeats > 1 { format!("{cell_label} #{repeat}") } else { cell_label.clone() };
    let config = TrialConfig {
        network,
        train,
        init_strategy: base.init_strategy,
        pretrain,
    };

    let start = Instant::now();
    let outcome = (|| -> Result<(f64, TrainHistory)> {
        let mut model = fresh_model(&config.network, data.embeddings, base.encode, data.train.scheme(), derive_seed(seed, 0))?;
        if let Some(p) = &config.pretrain {
            let ckpt = checkpoints[p].as_ref().map_err(|e| Error::config(e.clone()))?;
            model = apply_init_strategy(&model, ckpt, config.init_strategy)?;
        }
        let history = Trainer::new(config.train.clone())?.fit(&mut model, data.train, Some(data.dev))?;
        let f1 = score(data.dev, &model.predict_corpus(data.dev)?)?.micro_f1();
        Ok((f1, history))
    })();
    let wall_time_secs = start.elapsed().as_secs_f64();
    let (f1, error, history) = match outcome {
        Ok((f1, h)) => (Some(f1), None, h),
        Err(e) => {
            log::warn!("trial `{label}` failed: {e}");
            (None, Some(e.to_string()), TrainHistory::default())
        }
    };
    ExperimentRecord {
        label,
        cell: cell_label,
        axes: cell.iter().map(|(n, v)| (n.to_string(), v.text())).collect(),
        repeat,
        seed,
        config,
        f1,
        error,
        history,
        wall_time_secs,
    }
}
