//! The BLSTM-CNN tagger: configuration, named parameters, initialization,
//! and the batched forward/backward pass.

mod model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CasingClass, CHAR_PAD, CHAR_VOCAB, MAX_CHARS, WORD_PAD, WORD_UNK};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{BatchNormState, LstmWeights, Real, Tensor};

pub use model::{decode_tags, Forward, Gradients, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub char_vocab: usize,
    pub char_dim: usize,
    pub max_chars: usize,
    pub conv_filters: usize,
    pub conv_width: usize,
    pub dropout: f64,
    pub word_dim: usize,
    pub casing_dim: usize,
    pub lstm_units: usize,
    pub n_tags: usize,
    pub batch_norm: bool,
    pub trainable_embeddings: bool,
    pub char_init_range: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            char_vocab: CHAR_VOCAB,
            char_dim: 30,
            max_chars: MAX_CHARS,
            conv_filters: 30,
            conv_width: 3,
            dropout: 0.5,
            word_dim: 50,
            casing_dim: CasingClass::COUNT,
            lstm_units: 200,
            n_tags: 3,
            batch_norm: false,
            trainable_embeddings: false,
            char_init_range: 0.5,
        }
    }
}

impl NetworkConfig {
    /// Per-token feature width fed to the BLSTM.
    pub fn concat_width(&self) -> usize {
        self.conv_filters + self.word_dim + self.casing_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("char_dim", self.char_dim),
            ("conv_filters", self.conv_filters),
            ("conv_width", self.conv_width),
            ("word_dim", self.word_dim),
            ("lstm_units", self.lstm_units),
            ("n_tags", self.n_tags),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.char_vocab != CHAR_VOCAB || self.max_chars != MAX_CHARS {
            return Err(Error::config(format!(
                "char_vocab and max_chars are fixed at {CHAR_VOCAB} and {MAX_CHARS}"
            )));
        }
        if self.casing_dim != CasingClass::COUNT {
            return Err(Error::config(format!(
                "casing_dim must equal the {} casing classes",
                CasingClass::COUNT
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        if !(self.char_init_range > 0.0 && self.char_init_range.is_finite()) {
            return Err(Error::config("char_init_range must be positive"));
        }
        if self.n_tags.is_multiple_of(2) {
            return Err(Error::config("n_tags must be 1 + 2 per category"));
        }
        Ok(())
    }

    /// Whether `name` receives gradients.
    pub fn is_trainable(&self, name: &str) -> bool {
        match name {
            "casing_embed" | "batch_norm.running_mean" | "batch_norm.running_var" => false,
            "word_embed" => self.trainable_embeddings,
            _ => true,
        }
    }

    /// Tensor names and shapes for a word vocabulary of `vocab_len` rows.
    pub fn manifest(&self, vocab_len: usize) -> Vec<(&'static str, Vec<usize>)> {
        let (f, h) = (self.concat_width(), self.lstm_units);
        let mut out = vec![
            ("char_embed", vec![self.char_vocab, self.char_dim]),
            ("char_conv.kernel", vec![self.conv_width, self.char_dim, self.conv_filters]),
            ("char_conv.bias", vec![self.conv_filters]),
            ("word_embed", vec![vocab_len, self.word_dim]),
            ("casing_embed", vec![self.casing_dim, self.casing_dim]),
        ];
        for dir in ["fwd", "bwd"] {
            out.push((lstm_name(dir, "input_kernel"), vec![f, 4 * h]));
            out.push((lstm_name(dir, "recurrent_kernel"), vec![h, 4 * h]));
            out.push((lstm_name(dir, "bias"), vec![4 * h]));
        }
        out.push(("output.kernel", vec![2 * h, self.n_tags]));
        out.push(("output.bias", vec![self.n_tags]));
        if self.batch_norm {
            for name in BN_NAMES {
                out.push((name, vec![f]));
            }
        }
        out
    }
}

const BN_NAMES: [&str; 4] = [
    "batch_norm.gamma",
    "batch_norm.beta",
    "batch_norm.running_mean",
    "batch_norm.running_var",
];

fn lstm_name(dir: &str, part: &str) -> &'static str {
    match (dir, part) {
        ("fwd", "input_kernel") => "blstm.fwd.input_kernel",
        ("fwd", "recurrent_kernel") => "blstm.fwd.recurrent_kernel",
        ("fwd", "bias") => "blstm.fwd.bias",
        ("bwd", "input_kernel") => "blstm.bwd.input_kernel",
        ("bwd", "recurrent_kernel") => "blstm.bwd.recurrent_kernel",
        ("bwd", "bias") => "blstm.bwd.bias",
        _ => unreachable!("unknown lstm tensor {dir}.{part}"),
    }
}

/// True for the tensors of the recurrent layer.
pub fn is_blstm_tensor(name: &str) -> bool {
    name.starts_with("blstm.")
}

/// True for the output projection.
pub fn is_output_tensor(name: &str) -> bool {
    name.starts_with("output.")
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: BatchNormState<T>,
}

/// Every tensor of the network, addressable by its manifest name.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub char_embed: Tensor<T>,
    pub conv_kernel: Tensor<T>,
    pub conv_bias: Tensor<T>,
    pub word_embed: Tensor<T>,
    pub casing_embed: Tensor<T>,
    pub fwd: LstmWeights<T>,
    pub bwd: LstmWeights<T>,
    pub out_kernel: Tensor<T>,
    pub out_bias: Tensor<T>,
    pub batch_norm: Option<BatchNormParams<T>>,
}

impl<T: Real> ModelParams<T> {
    /// All-zero parameters with the manifest's shapes.
    pub fn zeros(config: &NetworkConfig, vocab_len: usize) -> Self {
        let f = config.concat_width();
        let h = config.lstm_units;
        ModelParams {
            char_embed: Tensor::zeros(&[config.char_vocab, config.char_dim]),
            conv_kernel: Tensor::zeros(&[config.conv_width, config.char_dim, config.conv_filters]),
            conv_bias: Tensor::zeros(&[config.conv_filters]),
            word_embed: Tensor::zeros(&[vocab_len, config.word_dim]),
            casing_embed: Tensor::zeros(&[config.casing_dim, config.casing_dim]),
            fwd: LstmWeights::zeros(f, h),
            bwd: LstmWeights::zeros(f, h),
            out_kernel: Tensor::zeros(&[2 * h, config.n_tags]),
            out_bias: Tensor::zeros(&[config.n_tags]),
            batch_norm: config.batch_norm.then(|| BatchNormParams {
                gamma: Tensor::zeros(&[f]),
                beta: Tensor::zeros(&[f]),
                state: BatchNormState {
                    running_mean: Tensor::zeros(&[f]),
                    running_var: Tensor::zeros(&[f]),
                },
            }),
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.word_embed.shape()[0]
    }

    /// `(name, tensor)` in manifest order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = vec![
            ("char_embed", &self.char_embed),
            ("char_conv.kernel", &self.conv_kernel),
            ("char_conv.bias", &self.conv_bias),
            ("word_embed", &self.word_embed),
            ("casing_embed", &self.casing_embed),
        ];
        for (dir, w) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            out.push((lstm_name(dir, "input_kernel"), &w.input_kernel));
            out.push((lstm_name(dir, "recurrent_kernel"), &w.recurrent_kernel));
            out.push((lstm_name(dir, "bias"), &w.bias));
        }
        out.push(("output.kernel", &self.out_kernel));
        out.push(("output.bias", &self.out_bias));
        if let Some(bn) = &self.batch_norm {
            out.extend(BN_NAMES.into_iter().zip([
                &bn.gamma,
                &bn.beta,
                &bn.state.running_mean,
                &bn.state.running_var,
            ]));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut out = vec![
            ("char_embed", &mut self.char_embed),
            ("char_conv.kernel", &mut self.conv_kernel),
            ("char_conv.bias", &mut self.conv_bias),
            ("word_embed", &mut self.word_embed),
            ("casing_embed", &mut self.casing_embed),
        ];
        for (dir, w) in [("fwd", &mut self.fwd), ("bwd", &mut self.bwd)] {
            out.push((lstm_name(dir, "input_kernel"), &mut w.input_kernel));
            out.push((lstm_name(dir, "recurrent_kernel"), &mut w.recurrent_kernel));
            out.push((lstm_name(dir, "bias"), &mut w.bias));
        }
        out.push(("output.kernel", &mut self.out_kernel));
        out.push(("output.bias", &mut self.out_bias));
        if let Some(bn) = &mut self.batch_norm {
            out.extend(BN_NAMES.into_iter().zip([
                &mut bn.gamma,
                &mut bn.beta,
                &mut bn.state.running_mean,
                &mut bn.state.running_var,
            ]));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.named().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.named_mut().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    /// Checks every tensor against `config.manifest`.
    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        let manifest = config.manifest(self.vocab_len());
        let named = self.named();
        if manifest.len() != named.len() {
            return Err(Error::shape(format!(
                "parameter set has {} tensors, config expects {}",
                named.len(),
                manifest.len()
            )));
        }
        for ((name, shape), (have, tensor)) in manifest.iter().zip(&named) {
            debug_assert_eq!(name, have);
            if tensor.shape() != &shape[..] {
                return Err(Error::shape(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let lstm = |w: &LstmWeights<T>| LstmWeights {
            input_kernel: w.input_kernel.cast(),
            recurrent_kernel: w.recurrent_kernel.cast(),
            bias: w.bias.cast(),
        };
        ModelParams {
            char_embed: self.char_embed.cast(),
            conv_kernel: self.conv_kernel.cast(),
            conv_bias: self.conv_bias.cast(),
            word_embed: self.word_embed.cast(),
            casing_embed: self.casing_embed.cast(),
            fwd: lstm(&self.fwd),
            bwd: lstm(&self.bwd),
            out_kernel: self.out_kernel.cast(),
            out_bias: self.out_bias.cast(),
            batch_norm: self.batch_norm.as_ref().map(|bn| BatchNormParams {
                gamma: bn.gamma.cast(),
                beta: bn.beta.cast(),
                state: BatchNormState {
                    running_mean: bn.state.running_mean.cast(),
                    running_var: bn.state.running_var.cast(),
                },
            }),
        }
    }
}

fn glorot<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-limit..=limit)))
}

/// Fresh parameters. Word rows come from `emb` in order after PAD (zeros)
/// and UNK (mean of all rows); the char PAD row is zero.
pub fn init_model(config: &NetworkConfig, emb: &EmbeddingMatrix, seed: u64) -> Result<ModelParams<f32>> {
    config.validate()?;
    if emb.dim() != config.word_dim {
        return Err(Error::shape(format!(
            "embeddings have dimension {}, config expects {}",
            emb.dim(),
            config.word_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_len = emb.len() + 2;
    let mut p = ModelParams::zeros(config, vocab_len);

    let r = config.char_init_range;
    let cd = config.char_dim;
    for (i, v) in p.char_embed.data_mut().iter_mut().enumerate() {
        let x = rng.random_range(-r..=r) as f32;
        *v = if i / cd == CHAR_PAD { 0.0 } else { x };
    }
    let (w, cin, cout) = (config.conv_width, config.char_dim, config.conv_filters);
    p.conv_kernel = glorot(&[w, cin, cout], w * cin, w * cout, &mut rng);

    let d = config.word_dim;
    let unk = emb.mean_row();
    p.word_embed.row_mut(WORD_UNK).copy_from_slice(&unk);
    for i in 0..emb.len() {
        p.word_embed.row_mut(i + 2).copy_from_slice(emb.row(i));
    }
    debug_assert!(p.word_embed.row(WORD_PAD).iter().all(|&v| v == 0.0));
    debug_assert_eq!(p.word_embed.row(0).len(), d);

    for (i, v) in p.casing_embed.data_mut().iter_mut().enumerate() {
        *v = if i / config.casing_dim == i % config.casing_dim { 1.0 } else { 0.0 };
    }

    let (f, h) = (config.concat_width(), config.lstm_units);
    for weights in [&mut p.fwd, &mut p.bwd] {
        weights.input_kernel = glorot(&[f, 4 * h], f, 4 * h, &mut rng);
        weights.recurrent_kernel = glorot(&[h, 4 * h], h, 4 * h, &mut rng);
    }
    p.out_kernel = glorot(&[2 * h, config.n_tags], 2 * h, config.n_tags, &mut rng);
    if let Some(bn) = &mut p.batch_norm {
        bn.gamma = Tensor::from_fn(&[f], |_| 1.0);
        bn.state = BatchNormState::new(f);
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(n: usize, d: usize) -> EmbeddingMatrix {
        let tokens = (0..n).map(|i| format!("w{i}")).collect();
        let vectors = (0..n * d).map(|i| i as f32 * 0.01).collect();
        EmbeddingMatrix::new(tokens, vectors, d).unwrap()
    }

    fn small() -> NetworkConfig {
        NetworkConfig {
            lstm_units: 16,
            n_tags: 5,
            word_dim: 6,
            batch_norm: true,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn init_ranges_and_zero_biases() {
        let config = small();
        let p = init_model(&config, &emb(10, 6), 3).unwrap();
        p.validate(&config).unwrap();
        assert!(p.char_embed.data().iter().all(|v| v.abs() <= 0.5));
        assert!(p.char_embed.row(CHAR_PAD).iter().all(|&v| v == 0.0));
        for name in ["char_conv.bias", "blstm.fwd.bias", "blstm.bwd.bias", "output.bias", "batch_norm.beta"] {
            assert!(p.get(name).unwrap().data().iter().all(|&v| v == 0.0), "{name}");
        }
        let limit = (6.0f64 / (32 + 5) as f64).sqrt() as f32;
        assert!(p.out_kernel.data().iter().all(|v| v.abs() <= limit));
        assert!(p.out_kernel.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn word_rows_follow_embeddings() {
        let e = emb(4, 6);
        let p = init_model(&small(), &e, 0).unwrap();
        assert!(p.word_embed.row(WORD_PAD).iter().all(|&v| v == 0.0));
        assert_eq!(p.word_embed.row(WORD_UNK), &e.mean_row()[..]);
        assert_eq!(p.word_embed.row(2), e.row(0));
        assert_eq!(p.word_embed.row(5), e.row(3));
    }

    #[test]
    fn casing_is_identity() {
        let p = init_model(&small(), &emb(2, 6), 0).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(p.casing_embed.row(i)[j], (i == j) as u8 as f32);
            }
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let e = emb(5, 6);
        assert_eq!(init_model(&small(), &e, 7).unwrap(), init_model(&small(), &e, 7).unwrap());
        assert_ne!(init_model(&small(), &e, 7).unwrap(), init_model(&small(), &e, 8).unwrap());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(init_model(&small(), &emb(3, 5), 0).is_err());
    }

    #[test]
    fn manifest_names_unique_and_complete() {
        let config = small();
        let m = config.manifest(12);
        let mut names: Vec<_> = m.iter().map(|(n, _)| *n).collect();
        assert_eq!(names.len(), 17);
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 17);
        let no_bn = NetworkConfig { batch_norm: false, ..config };
        assert_eq!(no_bn.manifest(12).len(), 13);
    }

    #[test]
    fn default_widths() {
        let c = NetworkConfig::default();
        assert_eq!(c.concat_width(), 88);
        let p = init_model(&c, &emb(3, 50), 0).unwrap();
        assert_eq!(p.fwd.input_kernel.shape(), &[88, 800]);
        assert_eq!(p.out_kernel.shape(), &[400, 3]);
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use std::collections::BTreeSet;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{init_model, Model, NetworkConfig};
    use crate::corpus::{generate_synthetic_corpus, EncodeOptions, SyntheticSpec, TaggedCorpus};
    use crate::embeddings::EmbeddingMatrix;

    pub fn tiny_config(n_tags: usize) -> NetworkConfig {
        NetworkConfig {
            char_dim: 4,
            conv_filters: 3,
            word_dim: 5,
            lstm_units: 3,
            dropout: 0.0,
            n_tags,
            ..NetworkConfig::default()
        }
    }

    pub fn toy_corpus(sentences: usize, seed: u64) -> TaggedCorpus {
        let spec = SyntheticSpec {
            categories: 2,
            sentences,
            sentences_per_doc: 1,
            entity_vocab: 6,
            context_vocab: 12,
            max_sentence_len: 7,
            ..SyntheticSpec::default()
        };
        generate_synthetic_corpus(&spec, seed)
    }

    /// Random vectors for every other lowercased corpus type, so both known
    /// and unknown words occur.
    pub fn toy_embeddings(corpus: &TaggedCorpus, d: usize, seed: u64) -> EmbeddingMatrix {
        let types: BTreeSet<String> = corpus
            .sentences()
            .flat_map(|s| s.tokens())
            .map(|t| t.as_str().to_lowercase())
            .collect();
        let tokens: Vec<String> = types.into_iter().step_by(2).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..tokens.len() * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmbeddingMatrix::new(tokens, vectors, d).unwrap()
    }

    pub fn toy_model(config: NetworkConfig, corpus: &TaggedCorpus, seed: u64) -> Model<f32> {
        let emb = toy_embeddings(corpus, config.word_dim, seed);
        let vocab = emb.vocab(EncodeOptions::default());
        let params = init_model(&config, &emb, seed).unwrap();
        Model::new(config, params, vocab, corpus.scheme().clone()).unwrap()
    }
}
