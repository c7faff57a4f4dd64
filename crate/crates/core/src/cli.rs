//! Command-line front end. Every command resolves its settings as defaults,
//! then the `--config` file, then flags, and writes the result to
//! `resolved_config.toml` in its output directory.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{
    generate_domain_pair, parse_conll_with_stats, sample_few_shot, write_conll, LabelScheme, TaggedCorpus,
};
use crate::embeddings::{load_embeddings, oov_report, train_skipgram, EmbeddingMatrix, SkipgramConfig};
use crate::error::{Error, Result};
use crate::eval::score;
use crate::grid::{run_grid, GridData, ExperimentRecord};
use crate::optim::{Decay, OptimizerKind, TrainHistory, Trainer};
use crate::report::{curves_svg, write_curves_csv, write_grid_csv, write_waterfall_csv};
use crate::seed::derive_seed;
use crate::transfer::{
    apply_init_strategy, fresh_model, load_checkpoint, sequential_pretrain, Checkpoint, InitStrategy, Stage,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Parser)]
#[command(name = "fsner", version, about = "Few-shot NER with a BLSTM-CNN tagger and transfer learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a column-format corpus and write it back normalized.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic source domain and a related target domain.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train skip-gram word vectors on one or more corpora.
    EmbedTrain {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        min_count: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Count out-of-vocabulary types before and after normalization.
    OovReport {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train from random initialization; several `--train` files train in
    /// sequence, each stage starting from the previous one.
    Pretrain {
        #[arg(long, required = true)]
        train: Vec<PathBuf>,
        /// Monitored after each epoch of the last stage.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a (possibly few-shot) target task, optionally starting from a
    /// checkpoint.
    Finetune {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_strategy)]
        init_strategy: Option<InitStrategy>,
        #[arg(long)]
        few_shot: Option<usize>,
        #[command(flatten)]
        flags: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Run the configured hyperparameter grid.
    Grid {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        few_shot: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_parser = parse_strategy)]
        init_strategy: Option<InitStrategy>,
        #[command(flatten)]
        flags: TrainFlags,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a labelled corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Turn histories, grid results or stage scores into tables and charts.
    Report {
        #[arg(long, value_enum)]
        kind: ReportKind,
        /// `history.json` files for curves, a `results.json` for grid, or a
        /// `label,f1` CSV for waterfall.
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Curves,
    Grid,
    Waterfall,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    /// Learning rate of the selected optimizer.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = parse_decay)]
    pub decay: Option<Decay>,
    #[arg(long)]
    pub batch_norm: bool,
    #[arg(long)]
    pub trainable_embeddings: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn parse_strategy(s: &str) -> std::result::Result<InitStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "nadam" => Ok(OptimizerKind::Nadam),
        _ => Err(format!("unknown optimizer `{s}` (expected sgd or nadam)")),
    }
}

fn parse_decay(s: &str) -> std::result::Result<Decay, String> {
    match s {
        "constant" => Ok(Decay::Constant),
        "scheduled" => Ok(Decay::Scheduled),
        _ => Err(format!("unknown decay `{s}` (expected constant or scheduled)")),
    }
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.optimizer {
            cfg.train.optimizer = v;
        }
        if let Some(v) = self.lr {
            match cfg.train.optimizer {
                OptimizerKind::Sgd => cfg.train.sgd_lr = v,
                OptimizerKind::Nadam => cfg.train.nadam.lr = v,
            }
        }
        if let Some(v) = self.decay {
            cfg.train.decay = v;
        }
        cfg.network.batch_norm |= self.batch_norm;
        cfg.network.trainable_embeddings |= self.trainable_embeddings;
        if let Some(v) = self.jobs {
            cfg.jobs = v;
        }
    }
}

/// Defaults, then the config file, then `--seed`; the caller applies the
/// remaining flags.
fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.inputs.clear();
    Ok(cfg)
}

fn record_input(cfg: &mut RunConfig, role: &str, paths: &[&Path]) {
    cfg.inputs
        .insert(role.to_string(), paths.iter().map(|p| p.display().to_string()).collect());
}

fn finish_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    write_text(&out.join(RESOLVED_CONFIG), &cfg.to_toml()?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::file(path, e))?))
}

fn read_corpus(path: &Path) -> Result<TaggedCorpus> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let (corpus, stats) = parse_conll_with_stats(BufReader::new(file))?;
    if stats.repaired_tags > 0 {
        log::warn!("{}: repaired {} I- tags", path.display(), stats.repaired_tags);
    }
    Ok(corpus)
}

fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    load_embeddings(BufReader::new(file))
}

fn write_corpus(corpus: &TaggedCorpus, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    write_conll(corpus, &mut out)?;
    out.flush().map_err(|e| Error::file(path, e))
}

/// Learning curves of one command, as read back by `report --kind curves`.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct HistoryFile {
    pub runs: Vec<LabelledHistory>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelledHistory {
    pub label: String,
    pub history: TrainHistory,
}

fn write_histories(out: &Path, runs: Vec<LabelledHistory>) -> Result<()> {
    let file = HistoryFile { runs };
    write_text(&out.join("history.json"), &serde_json::to_string_pretty(&file)?)?;
    let pairs: Vec<(String, TrainHistory)> = file.runs.into_iter().map(|r| (r.label, r.history)).collect();
    write_curves_csv(&pairs, create(&out.join("curves.csv"))?)
}

/// Both corpora relabelled into one scheme covering each.
fn align(train: TaggedCorpus, dev: TaggedCorpus, preferred: Option<&LabelScheme>) -> Result<(TaggedCorpus, TaggedCorpus)> {
    let mut scheme = train.scheme().union(dev.scheme());
    if let Some(p) = preferred {
        let merged = p.union(&scheme);
        if merged.n_tags() == p.n_tags() {
            scheme = p.clone();
        }
    }
    Ok((train.remap(&scheme)?, dev.remap(&scheme)?))
}

/// Parses `args` and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::config(e.to_string()))?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest { input, common } => {
            let mut cfg = base_config(&common)?;
            record_input(&mut cfg, "input", &[&input]);
            finish_config(&cfg, &common.out)?;
            let file = File::open(&input).map_err(|e| Error::file(&input, e))?;
            let (corpus, stats) = parse_conll_with_stats(BufReader::new(file))?;
            write_corpus(&corpus, &common.out.join("corpus.conll"))?;
            let text = format!(
                "documents = {}\nsentences = {}\ntokens = {}\nrepaired_tags = {}\ncategories = {:?}\n",
                stats.documents,
                stats.sentences,
                stats.tokens,
                stats.repaired_tags,
                corpus.scheme().categories()
            );
            write_text(&common.out.join("ingest.txt"), &text)
        }
        Command::Synth { common } => {
            let cfg = base_config(&common)?;
            finish_config(&cfg, &common.out)?;
            let pair = generate_domain_pair(&cfg.synth, cfg.seed);
            write_corpus(&pair.source, &common.out.join("source.conll"))?;
            write_corpus(&pair.target_train, &common.out.join("target_train.conll"))?;
            write_corpus(&pair.target_dev, &common.out.join("target_dev.conll"))?;
            write_corpus(&pair.target_test, &common.out.join("target_test.conll"))
        }
        Command::EmbedTrain { input, epochs, dim, min_count, common } => {
            let mut cfg = base_config(&common)?;
            if let Some(v) = epochs {
                cfg.embed.epochs = v;
            }
            if let Some(v) = dim {
                cfg.embed.d = v;
            }
            if let Some(v) = min_count {
                cfg.embed.min_count = v;
            }
            let paths: Vec<&Path> = input.iter().map(PathBuf::as_path).collect();
            record_input(&mut cfg, "input", &paths);
            finish_config(&cfg, &common.out)?;
            let mut sentences: Vec<Vec<String>> = Vec::new();
            for path in &input {
                let corpus = read_corpus(path)?;
                sentences.extend(corpus.sentences().map(|s| s.tokens().iter().map(|t| t.as_str().to_string()).collect()));
            }
            let sg = SkipgramConfig {
                seed: derive_seed(cfg.seed, 4),
                ..cfg.embed.clone()
            };
            let emb = train_skipgram(&sentences, &sg)?;
            let path = common.out.join("embeddings.txt");
            let mut out = create(&path)?;
            emb.save(&mut out)?;
            out.flush().map_err(|e| Error::file(&path, e))
        }
        Command::OovReport { input, embeddings, common } => {
            let mut cfg = base_config(&common)?;
            record_input(&mut cfg, "input", &[&input]);
            record_input(&mut cfg, "embeddings", &[&embeddings]);
            finish_config(&cfg, &common.out)?;
            let report = oov_report(&read_corpus(&input)?, &read_embeddings(&embeddings)?);
            let text = format!(
                "types = {}\noov_raw = {}\noov_normalized = {}\nreduction = {}\n",
                report.types, report.oov_raw, report.oov_normalized, report.reduction
            );
            print!("{text}");
            write_text(&common.out.join("oov_report.txt"), &text)
        }
        Command::Pretrain { train, dev, embeddings, flags, common } => {
            let mut cfg = base_config(&common)?;
            flags.apply(&mut cfg);
            let emb = read_embeddings(&embeddings)?;
            cfg.network.word_dim = emb.dim();
            let paths: Vec<&Path> = train.iter().map(PathBuf::as_path).collect();
            record_input(&mut cfg, "train", &paths);
            record_input(&mut cfg, "embeddings", &[&embeddings]);
            if let Some(d) = &dev {
                record_input(&mut cfg, "dev", &[d]);
            }
            finish_config(&cfg, &common.out)?;
            let mut stages = Vec::with_capacity(train.len());
            for path in &train {
                stages.push(Stage {
                    corpus: read_corpus(path)?,
                    dev: None,
                    network: cfg.network.clone(),
                    train: cfg.train.clone(),
                });
            }
            if let Some(d) = &dev {
                let last = stages.last_mut().expect("at least one --train");
                let (t, d) = align(last.corpus.clone(), read_corpus(d)?, None)?;
                last.corpus = t;
                last.dev = Some(d);
            }
            let (ckpt, histories) = crate::exec::with_jobs(cfg.jobs, || {
                sequential_pretrain(&stages, &emb, cfg.encode, cfg.init_seed())
            })?;
            ckpt.save(&common.out.join("model.ckpt"))?;
            let runs = train
                .iter()
                .zip(histories)
                .enumerate()
                .map(|(i, (p, history))| LabelledHistory {
                    label: format!("stage{} {}", i + 1, file_label(p)),
                    history,
                })
                .collect();
            write_histories(&common.out, runs)
        }
        Command::Finetune { train, dev, embeddings, checkpoint, init_strategy, few_shot, flags, common } => {
            let mut cfg = base_config(&common)?;
            flags.apply(&mut cfg);
            if let Some(s) = init_strategy {
                cfg.init_strategy = s;
            }
            if few_shot.is_some() {
                cfg.few_shot = few_shot;
            }
            let emb = read_embeddings(&embeddings)?;
            cfg.network.word_dim = emb.dim();
            record_input(&mut cfg, "train", &[&train]);
            record_input(&mut cfg, "dev", &[&dev]);
            record_input(&mut cfg, "embeddings", &[&embeddings]);
            if let Some(c) = &checkpoint {
                record_input(&mut cfg, "checkpoint", &[c]);
            }
            finish_config(&cfg, &common.out)?;

            let ckpt = checkpoint.as_deref().map(load_checkpoint).transpose()?;
            let mut train_corpus = read_corpus(&train)?;
            if let Some(k) = cfg.few_shot {
                train_corpus = sample_few_shot(&train_corpus, k, cfg.sample_seed())?;
            }
            let (train_corpus, dev_corpus) = align(train_corpus, read_corpus(&dev)?, ckpt.as_ref().map(|c| &c.scheme))?;
            write_corpus(&train_corpus, &common.out.join("train_sample.conll"))?;

            let (model, history, report) = crate::exec::with_jobs(cfg.jobs, || -> Result<_> {
                let mut model = fresh_model(&cfg.network, &emb, cfg.encode, train_corpus.scheme(), cfg.init_seed())?;
                if let Some(ckpt) = &ckpt {
                    model = apply_init_strategy(&model, ckpt, cfg.init_strategy)?;
                }
                let mut trainer = Trainer::new(cfg.train_config())?;
                let history = trainer.fit(&mut model, &train_corpus, Some(&dev_corpus))?;
                let report = score(&dev_corpus, &model.predict_corpus(&dev_corpus)?)?;
                Ok((Checkpoint::from_model(&model, Some(&trainer.state)), history, report))
            })?;
            model.save(&common.out.join("model.ckpt"))?;
            write_text(&common.out.join("eval.txt"), &report.to_kv())?;
            report.write_csv(create(&common.out.join("eval.csv"))?)?;
            write_histories(
                &common.out,
                vec![LabelledHistory {
                    label: file_label(&train),
                    history,
                }],
            )
        }
        Command::Grid { train, dev, embeddings, few_shot, repeats, init_strategy, flags, common } => {
            let mut cfg = base_config(&common)?;
            flags.apply(&mut cfg);
            if few_shot.is_some() {
                cfg.few_shot = few_shot;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            if let Some(s) = init_strategy {
                cfg.init_strategy = s;
            }
            let emb = read_embeddings(&embeddings)?;
            cfg.network.word_dim = emb.dim();
            record_input(&mut cfg, "train", &[&train]);
            record_input(&mut cfg, "dev", &[&dev]);
            record_input(&mut cfg, "embeddings", &[&embeddings]);
            finish_config(&cfg, &common.out)?;

            let mut train_corpus = read_corpus(&train)?;
            if let Some(k) = cfg.few_shot {
                train_corpus = sample_few_shot(&train_corpus, k, cfg.sample_seed())?;
            }
            let (train_corpus, dev_corpus) = align(train_corpus, read_corpus(&dev)?, None)?;
            let data = GridData {
                train: &train_corpus,
                dev: &dev_corpus,
                embeddings: &emb,
            };
            let records = run_grid(&cfg.grid, &cfg, &data)?;
            write_text(&common.out.join("results.json"), &serde_json::to_string_pretty(&records)?)?;
            write_grid_csv(&records, create(&common.out.join("grid.csv"))?)?;
            let mut timing = csv::Writer::from_writer(create(&common.out.join("timing.csv"))?);
            timing.write_record(["label", "wall_time_secs"])?;
            for r in &records {
                timing.write_record([r.label.clone(), format!("{:.3}", r.wall_time_secs)])?;
            }
            timing.flush()?;
            Ok(())
        }
        Command::Eval { checkpoint, input, common } => {
            let mut cfg = base_config(&common)?;
            record_input(&mut cfg, "checkpoint", &[&checkpoint]);
            record_input(&mut cfg, "input", &[&input]);
            finish_config(&cfg, &common.out)?;
            let model = load_checkpoint(&checkpoint)?.into_model()?;
            let corpus = read_corpus(&input)?.remap(model.scheme())?;
            let predicted = model.predict_corpus(&corpus)?;
            let report = score(&corpus, &predicted)?;
            write_text(&common.out.join("eval.txt"), &report.to_kv())?;
            report.write_csv(create(&common.out.join("eval.csv"))?)?;
            let predicted_corpus = corpus.with_tags(&predicted)?;
            write_corpus(&predicted_corpus, &common.out.join("predictions.conll"))?;
            print!("{}", report.to_kv());
            Ok(())
        }
        Command::Report { kind, input, common } => {
            let mut cfg = base_config(&common)?;
            let paths: Vec<&Path> = input.iter().map(PathBuf::as_path).collect();
            record_input(&mut cfg, "input", &paths);
            finish_config(&cfg, &common.out)?;
            match kind {
                ReportKind::Curves => {
                    let mut runs = Vec::new();
                    for path in &input {
                        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
                        let file: HistoryFile = serde_json::from_str(&text)?;
                        runs.extend(file.runs.into_iter().map(|r| (r.label, r.history)));
                    }
                    write_curves_csv(&runs, create(&common.out.join("curves.csv"))?)?;
                    write_text(&common.out.join("curves.svg"), &curves_svg(&runs)?)
                }
                ReportKind::Grid => {
                    let mut records: Vec<ExperimentRecord> = Vec::new();
                    for path in &input {
                        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
                        records.extend(serde_json::from_str::<Vec<ExperimentRecord>>(&text)?);
                    }
                    write_grid_csv(&records, create(&common.out.join("grid.csv"))?)
                }
                ReportKind::Waterfall => {
                    let mut stages = Vec::new();
                    for path in &input {
                        let mut reader = csv::Reader::from_path(path)?;
                        for row in reader.deserialize::<(String, f64)>() {
                            stages.push(row?);
                        }
                    }
                    write_waterfall_csv(&stages, create(&common.out.join("waterfall.csv"))?)
                }
            }
        }
    }
}

fn file_label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

/// One JSON object describing `err`, for stderr.
pub fn error_line(err: &Error) -> String {
    serde_json::json!({ "error": err.kind(), "message": err.to_string() }).to_string()
}
