use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelParams, NetworkConfig};
use crate::corpus::{repair_bio, Batch, LabelScheme, TagId, TaggedCorpus, Token, Vocab, CHAR_PAD};
use crate::error::{Error, Result};
use crate::exec::{map_chunks, ExecMode};
use crate::numerics::{
    batch_norm_apply, batch_norm_backward, conv1d_same_backward_into, conv1d_same_into,
    mat_vec_acc, outer_acc, scan_backward_into, scan_forward, softmax_rows, softmax_xent_scaled,
    vec_mat_acc, BatchNormCache, LstmGrads, LstmWeights, Mode, Real, Tensor,
};
use crate::numerics::{apply_scale, dropout_in_place, BatchNormState};

/// Gradients keyed by tensor name; only trainable tensors appear.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

/// Activations plus, when requested, the loss and its gradients.
type Pass<T> = (Forward<T>, Option<(f64, Gradients<T>)>);

/// Intermediate and final activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    /// `b x w x n_tags`; padded positions are all zero.
    pub probs: Tensor<T>,
    /// Concatenated per-token features before batch norm, unmasked tokens
    /// only, in row order.
    pub features: Tensor<T>,
    /// BLSTM outputs for the same tokens.
    pub hidden: Tensor<T>,
}

/// A tagger bound to its vocabulary and label scheme.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: NetworkConfig,
    params: ModelParams<T>,
    vocab: Vocab,
    scheme: LabelScheme,
    exec: ExecMode,
}

/// Character-path activations for one token.
struct TokenChars<T> {
    ids: Vec<usize>,
    input: Vec<T>,
    scale1: Vec<T>,
    /// Per filter; `ids.len()` marks a position past the last character,
    /// where the convolution output is the bias alone.
    argmax: Vec<usize>,
    scale2: Vec<T>,
}

struct SentenceFeatures<T> {
    x: Vec<T>,
    chars: Vec<TokenChars<T>>,
}

struct SeqGrads<T> {
    fwd: LstmGrads<T>,
    bwd: LstmGrads<T>,
    out_kernel: Vec<T>,
    out_bias: Vec<T>,
}

struct SeqChunk<T> {
    loss: T,
    probs: Vec<Vec<T>>,
    hidden: Vec<Vec<T>>,
    d_x: Vec<Vec<T>>,
    grads: Option<SeqGrads<T>>,
}

struct CharChunk<T> {
    char_embed: Vec<T>,
    conv_kernel: Vec<T>,
    conv_bias: Vec<T>,
    words: Vec<(usize, Vec<T>)>,
}

impl<T: Real> Model<T> {
    pub fn new(config: NetworkConfig, params: ModelParams<T>, vocab: Vocab, scheme: LabelScheme) -> Result<Self> {
        config.validate()?;
        params.validate(&config)?;
        if vocab.len() != params.vocab_len() {
            return Err(Error::shape(format!(
                "vocabulary has {} words, word_embed has {} rows",
                vocab.len(),
                params.vocab_len()
            )));
        }
        if scheme.n_tags() != config.n_tags {
            return Err(Error::SchemeMismatch(format!(
                "scheme has {} tags, network outputs {}",
                scheme.n_tags(),
                config.n_tags
            )));
        }
        Ok(Model {
            config,
            params,
            vocab,
            scheme,
            exec: ExecMode::default(),
        })
    }

    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    pub fn set_exec(&mut self, exec: ExecMode) {
        self.exec = exec;
    }

    pub fn exec(&self) -> ExecMode {
        self.exec
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        &mut self.params
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn into_parts(self) -> (NetworkConfig, ModelParams<T>, Vocab, LabelScheme) {
        (self.config, self.params, self.vocab, self.scheme)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            vocab: self.vocab.clone(),
            scheme: self.scheme.clone(),
            exec: self.exec,
        }
    }

    /// Tag probabilities. Train mode applies dropout and batch statistics
    /// but leaves the running statistics untouched; infer mode draws
    /// nothing from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &Batch, mode: Mode, rng: &mut R) -> Result<Forward<T>> {
        let seed = match mode {
            Mode::Train => rng.random(),
            Mode::Infer => 0,
        };
        let mut state = self.params.batch_norm.as_ref().map(|bn| bn.state.clone());
        let (out, _) = self.run(batch, mode, seed, state.as_mut(), false)?;
        Ok(out)
    }

    /// Mean cross-entropy over unmasked tokens and gradients of every
    /// trainable tensor, in train mode. Updates batch-norm running
    /// statistics.
    pub fn loss_and_grads<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<(f64, Gradients<T>)> {
        let seed = rng.random();
        let mut state = self.params.batch_norm.as_ref().map(|bn| bn.state.clone());
        let (_, result) = self.run(batch, Mode::Train, seed, state.as_mut(), true)?;
        if let (Some(bn), Some(state)) = (self.params.batch_norm.as_mut(), state) {
            bn.state = state;
        }
        Ok(result.expect("gradients requested"))
    }

    /// Argmax tags (ties to the lowest id) with BIO repair.
    pub fn predict_tags(&self, sentences: &[&[Token]]) -> Result<Vec<Vec<TagId>>> {
        let k = self.config.n_tags;
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let mut out = Vec::with_capacity(sentences.len());
        for (c, group) in sentences.chunks(64).enumerate() {
            let sources = (c * 64..c * 64 + group.len()).collect();
            let batch = Batch::encode(group, None, sources, &self.vocab);
            let fwd = self.forward(&batch, Mode::Infer, &mut unused)?;
            for (row, s) in group.iter().enumerate() {
                let start = row * batch.w() * k;
                let probs = &fwd.probs.data()[start..start + s.len() * k];
                out.push(decode_tags(probs, k, &self.scheme));
            }
        }
        Ok(out)
    }

    pub fn predict_corpus(&self, corpus: &TaggedCorpus) -> Result<Vec<Vec<TagId>>> {
        let sentences: Vec<&[Token]> = corpus.sentences().map(|s| s.tokens()).collect();
        self.predict_tags(&sentences)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let v = self.params.vocab_len();
        if let Some(&bad) = batch.word_ids().iter().find(|&&id| id >= v) {
            return Err(Error::shape(format!("word id {bad} outside a vocabulary of {v}")));
        }
        if let Some(&bad) = batch.tag_ids().iter().find(|&&id| id >= self.config.n_tags) {
            return Err(Error::shape(format!("tag id {bad} outside {} tags", self.config.n_tags)));
        }
        Ok(())
    }

    fn run(
        &self,
        batch: &Batch,
        mode: Mode,
        seed: u64,
        bn_state: Option<&mut BatchNormState<T>>,
        want_grads: bool,
    ) -> Result<Pass<T>> {
        self.check_batch(batch)?;
        let c = &self.config;
        let p = &self.params;
        let (b, w, k) = (batch.b(), batch.w(), c.n_tags);
        let f = c.concat_width();
        let h = c.lstm_units;
        let lengths = batch.lengths();
        let total = batch.token_count();
        if want_grads && total == 0 {
            return Err(Error::shape("every position in the batch is masked"));
        }
        let offsets: Vec<usize> = lengths
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();

        // char path and concatenation, per sentence
        let sentences: Vec<SentenceFeatures<T>> = map_chunks(self.exec, b, |range| {
            range
                .map(|row| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(row as u64);
                    self.sentence_features(batch, row, mode, &mut rng)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect();

        let mut features = Vec::with_capacity(total * f);
        for s in &sentences {
            features.extend_from_slice(&s.x);
        }
        let features = Tensor::from_vec(&[total, f], features)?;

        let mut bn_cache: Option<BatchNormCache<T>> = None;
        let normalized = match (&p.batch_norm, bn_state) {
            (Some(bn), Some(state)) if total > 0 => {
                let (out, cache) = batch_norm_apply(&features, &bn.gamma, &bn.beta, state, mode)?;
                bn_cache = cache;
                out
            }
            _ => features.clone(),
        };

        // recurrent layer, output layer, and loss, per sentence
        let chunks: Vec<SeqChunk<T>> = map_chunks(self.exec, b, |range| {
            let mut chunk = SeqChunk {
                loss: T::zero(),
                probs: Vec::new(),
                hidden: Vec::new(),
                d_x: Vec::new(),
                grads: want_grads.then(|| SeqGrads {
                    fwd: LstmWeights::zeros(f, h),
                    bwd: LstmWeights::zeros(f, h),
                    out_kernel: vec![T::zero(); 2 * h * k],
                    out_bias: vec![T::zero(); k],
                }),
            };
            for row in range {
                let (o, n) = (offsets[row], lengths[row]);
                let x = &normalized.data()[o * f..(o + n) * f];
                let targets: Vec<usize> = (0..n).map(|col| batch.tag_ids()[row * w + col]).collect();
                self.sequence_step(x, n, &targets, total, &mut chunk);
            }
            chunk
        });

        let mut probs = Tensor::zeros(&[b, w, k]);
        let mut hidden = Vec::with_capacity(total * 2 * h);
        let mut loss = T::zero();
        let mut row = 0;
        for chunk in &chunks {
            loss += chunk.loss;
            for (pr, hd) in chunk.probs.iter().zip(&chunk.hidden) {
                let n = lengths[row];
                probs.data_mut()[row * w * k..(row * w + n) * k].copy_from_slice(pr);
                hidden.extend_from_slice(hd);
                row += 1;
            }
        }
        let forward = Forward {
            probs,
            features,
            hidden: Tensor::from_vec(&[total, 2 * h], hidden)?,
        };
        if !want_grads {
            return Ok((forward, None));
        }

        let mut grads = SeqGrads {
            fwd: LstmWeights::zeros(f, h),
            bwd: LstmWeights::zeros(f, h),
            out_kernel: vec![T::zero(); 2 * h * k],
            out_bias: vec![T::zero(); k],
        };
        let mut d_feat = Vec::with_capacity(total * f);
        for chunk in chunks {
            let g = chunk.grads.expect("gradients requested");
            add_lstm(&mut grads.fwd, &g.fwd);
            add_lstm(&mut grads.bwd, &g.bwd);
            add(&mut grads.out_kernel, &g.out_kernel);
            add(&mut grads.out_bias, &g.out_bias);
            for dx in chunk.d_x {
                d_feat.extend(dx);
            }
        }
        let mut d_feat = Tensor::from_vec(&[total, f], d_feat)?;
        let mut bn_grads = None;
        if let (Some(bn), Some(cache)) = (&p.batch_norm, &bn_cache) {
            let g = batch_norm_backward(&d_feat, &bn.gamma, cache)?;
            d_feat = g.input;
            bn_grads = Some((g.gamma, g.beta));
        }

        // back through the char path and embeddings, per sentence
        let char_chunks: Vec<CharChunk<T>> = map_chunks(self.exec, b, |range| {
            let mut chunk = CharChunk {
                char_embed: vec![T::zero(); p.char_embed.len()],
                conv_kernel: vec![T::zero(); p.conv_kernel.len()],
                conv_bias: vec![T::zero(); p.conv_bias.len()],
                words: Vec::new(),
            };
            for row in range {
                let o = offsets[row];
                for (col, tc) in sentences[row].chars.iter().enumerate() {
                    let d = &d_feat.row(o + col);
                    self.char_backward(tc, &d[..c.conv_filters], &mut chunk);
                    if c.trainable_embeddings {
                        let word = batch.word_ids()[row * w + col];
                        let dw = d[c.conv_filters..c.conv_filters + c.word_dim].to_vec();
                        chunk.words.push((word, dw));
                    }
                }
            }
            chunk
        });

        let mut d_char = Tensor::zeros(p.char_embed.shape());
        let mut d_kernel = Tensor::zeros(p.conv_kernel.shape());
        let mut d_bias = Tensor::zeros(p.conv_bias.shape());
        let mut d_word = c.trainable_embeddings.then(|| Tensor::zeros(p.word_embed.shape()));
        for chunk in char_chunks {
            add(d_char.data_mut(), &chunk.char_embed);
            add(d_kernel.data_mut(), &chunk.conv_kernel);
            add(d_bias.data_mut(), &chunk.conv_bias);
            if let Some(dw) = d_word.as_mut() {
                for (id, g) in chunk.words {
                    add(dw.row_mut(id), &g);
                }
            }
        }

        let mut out = Gradients::new();
        out.insert("char_embed".into(), d_char);
        out.insert("char_conv.kernel".into(), d_kernel);
        out.insert("char_conv.bias".into(), d_bias);
        if let Some(dw) = d_word {
            out.insert("word_embed".into(), dw);
        }
        for (dir, g) in [("fwd", grads.fwd), ("bwd", grads.bwd)] {
            out.insert(format!("blstm.{dir}.input_kernel"), g.input_kernel);
            out.insert(format!("blstm.{dir}.recurrent_kernel"), g.recurrent_kernel);
            out.insert(format!("blstm.{dir}.bias"), g.bias);
        }
        out.insert("output.kernel".into(), Tensor::from_vec(&[2 * h, k], grads.out_kernel)?);
        out.insert("output.bias".into(), Tensor::from_vec(&[k], grads.out_bias)?);
        if let Some((gamma, beta)) = bn_grads {
            out.insert("batch_norm.gamma".into(), gamma);
            out.insert("batch_norm.beta".into(), beta);
        }
        debug_assert!(out.keys().all(|n| c.is_trainable(n)));
        let loss = loss.to_f64().expect("finite loss");
        Ok((forward, Some((loss, out))))
    }

    fn sentence_features(&self, batch: &Batch, row: usize, mode: Mode, rng: &mut ChaCha8Rng) -> SentenceFeatures<T> {
        let c = &self.config;
        let p = &self.params;
        let n = batch.lengths()[row];
        let f = c.concat_width();
        let mut x = Vec::with_capacity(n * f);
        let mut chars = Vec::with_capacity(n);
        for col in 0..n {
            let cell = row * batch.w() + col;
            let (feat, tc) = self.char_forward(batch.chars_at(row, col), mode, rng);
            x.extend_from_slice(&feat);
            x.extend_from_slice(p.word_embed.row(batch.word_ids()[cell]));
            x.extend_from_slice(p.casing_embed.row(batch.casing_ids()[cell]));
            chars.push(tc);
        }
        SentenceFeatures { x, chars }
    }

    /// Embed, dropout, same-padded convolution, max over positions, dropout.
    /// Positions past the last character hold zero vectors, so only the
    /// first `len + width / 2` conv outputs differ from the bias.
    fn char_forward(&self, chars: &[usize], mode: Mode, rng: &mut ChaCha8Rng) -> (Vec<T>, TokenChars<T>) {
        let c = &self.config;
        let p = &self.params;
        let (cin, cout, width) = (c.char_dim, c.conv_filters, c.conv_width);
        let nc = chars.iter().position(|&id| id == CHAR_PAD).unwrap_or(chars.len());
        let m = (nc + width / 2).min(chars.len());
        let ids = chars[..m].to_vec();
        let mut input = vec![T::zero(); m * cin];
        for (l, &id) in ids.iter().enumerate().take(nc) {
            input[l * cin..(l + 1) * cin].copy_from_slice(p.char_embed.row(id));
        }
        let scale1 = dropout_in_place(&mut input, c.dropout, mode, rng);
        let mut conv = vec![T::zero(); m * cout];
        conv1d_same_into(&input, m, cin, p.conv_kernel.data(), width, cout, p.conv_bias.data(), &mut conv);
        let mut feat = vec![T::zero(); cout];
        let mut argmax = vec![0; cout];
        for j in 0..cout {
            let mut best = 0;
            for l in 1..m {
                if conv[l * cout + j] > conv[best * cout + j] {
                    best = l;
                }
            }
            let mut value = conv[best * cout + j];
            if m < chars.len() && p.conv_bias.data()[j] > value {
                best = m;
                value = p.conv_bias.data()[j];
            }
            feat[j] = value;
            argmax[j] = best;
        }
        let scale2 = dropout_in_place(&mut feat, c.dropout, mode, rng);
        (
            feat,
            TokenChars {
                ids,
                input,
                scale1,
                argmax,
                scale2,
            },
        )
    }

    fn char_backward(&self, tc: &TokenChars<T>, d_feat: &[T], chunk: &mut CharChunk<T>) {
        let c = &self.config;
        let (cin, cout, width) = (c.char_dim, c.conv_filters, c.conv_width);
        let m = tc.ids.len();
        let mut g = d_feat.to_vec();
        apply_scale(&mut g, &tc.scale2);
        let mut d_conv = vec![T::zero(); m * cout];
        for (j, &pos) in tc.argmax.iter().enumerate() {
            if pos < m {
                d_conv[pos * cout + j] = g[j];
            } else {
                chunk.conv_bias[j] += g[j];
            }
        }
        let mut d_input = vec![T::zero(); m * cin];
        conv1d_same_backward_into(
            &tc.input,
            m,
            cin,
            self.params.conv_kernel.data(),
            width,
            cout,
            &d_conv,
            Some(&mut d_input),
            &mut chunk.conv_kernel,
            &mut chunk.conv_bias,
        );
        apply_scale(&mut d_input, &tc.scale1);
        for (l, &id) in tc.ids.iter().enumerate() {
            if id == CHAR_PAD {
                continue;
            }
            add(&mut chunk.char_embed[id * cin..(id + 1) * cin], &d_input[l * cin..(l + 1) * cin]);
        }
    }

    fn sequence_step(&self, x: &[T], n: usize, targets: &[usize], total: usize, chunk: &mut SeqChunk<T>) {
        let c = &self.config;
        let p = &self.params;
        let (f, h, k) = (c.concat_width(), c.lstm_units, c.n_tags);
        let (fwd_steps, bwd_steps) = scan_forward(x, n, &p.fwd, &p.bwd);
        let mut hidden = Vec::with_capacity(n * 2 * h);
        for t in 0..n {
            hidden.extend_from_slice(&fwd_steps[t].h);
            hidden.extend_from_slice(&bwd_steps[t].h);
        }
        let mut logits = Vec::with_capacity(n * k);
        for t in 0..n {
            let mut row = p.out_bias.data().to_vec();
            vec_mat_acc(&mut row, &hidden[t * 2 * h..(t + 1) * 2 * h], p.out_kernel.data());
            logits.extend(row);
        }
        let logits = Tensor::from_vec(&[n, k], logits).expect("logit shape");
        chunk.probs.push(softmax_rows(&logits).expect("rank 2").into_data());
        if let Some(grads) = chunk.grads.as_mut() {
            let mask = vec![true; n];
            let (loss, d_logits) =
                softmax_xent_scaled(&logits, targets, &mask, total).expect("tags checked against n_tags");
            chunk.loss += loss;
            let mut d_hidden = vec![T::zero(); n * 2 * h];
            for t in 0..n {
                let g = d_logits.row(t);
                add(&mut grads.out_bias, g);
                let hrow = &hidden[t * 2 * h..(t + 1) * 2 * h];
                outer_acc(&mut grads.out_kernel, hrow, g);
                mat_vec_acc(&mut d_hidden[t * 2 * h..(t + 1) * 2 * h], p.out_kernel.data(), g);
            }
            let mut d_x = vec![T::zero(); n * f];
            scan_backward_into(
                x,
                n,
                &p.fwd,
                &p.bwd,
                &fwd_steps,
                &bwd_steps,
                &d_hidden,
                &mut d_x,
                &mut grads.fwd,
                &mut grads.bwd,
            );
            chunk.d_x.push(d_x);
        }
        chunk.hidden.push(hidden);
    }
}

/// Row-wise argmax over `n x k` probabilities, ties to the lowest tag id,
/// followed by BIO repair.
pub fn decode_tags<T: Real>(probs: &[T], k: usize, scheme: &LabelScheme) -> Vec<TagId> {
    let mut tags: Vec<TagId> = probs
        .chunks(k)
        .map(|p| {
            let mut best = 0;
            for (j, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    repair_bio(&mut tags, scheme);
    tags
}

fn add<T: Real>(acc: &mut [T], g: &[T]) {
    for (a, &v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

fn add_lstm<T: Real>(acc: &mut LstmGrads<T>, g: &LstmGrads<T>) {
    add(acc.input_kernel.data_mut(), g.input_kernel.data());
    add(acc.recurrent_kernel.data_mut(), g.recurrent_kernel.data());
    add(acc.bias.data_mut(), g.bias.data());
}
