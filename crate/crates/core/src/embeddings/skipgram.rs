use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Real};

pub const SUBWORD_BUCKETS: usize = 1 << 21;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipgramConfig {
    pub d: usize,
    pub window: usize,
    pub min_count: usize,
    pub lr0: f64,
    pub negatives: usize,
    pub epochs: usize,
    /// Character n-gram span `(min, max)`; `None` trains plain word vectors.
    pub subword_range: Option<(usize, usize)>,
    pub buckets: usize,
    pub lowercase: bool,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            d: 50,
            window: 5,
            min_count: 5,
            lr0: 0.05,
            negatives: 5,
            epochs: 5,
            subword_range: None,
            buckets: SUBWORD_BUCKETS,
            lowercase: true,
            seed: 0,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(format!("skip-gram: {m}")));
        if self.d == 0 {
            return fail("d must be at least 1");
        }
        if self.window == 0 {
            return fail("window must be at least 1");
        }
        if self.min_count == 0 {
            return fail("min_count must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail("lr0 must be positive");
        }
        if self.negatives == 0 {
            return fail("negatives must be at least 1");
        }
        if let Some((lo, hi)) = self.subword_range {
            if lo == 0 || lo > hi {
                return fail("subword range must satisfy 1 <= min <= max");
            }
            if self.buckets == 0 {
                return fail("buckets must be at least 1");
            }
        }
        Ok(())
    }
}

/// Negative-sampling loss for one pair:
/// `-ln σ(c·h) - Σ ln σ(-n·h)`.
pub fn sgns_pair_loss<T: Real>(h: &[T], context: &[T], negatives: &[&[T]]) -> T {
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    let mut loss = -sigmoid(dot(context, h)).ln();
    for n in negatives {
        loss -= sigmoid(-dot(n, h)).ln();
    }
    loss
}

/// Gradients of [`sgns_pair_loss`] with respect to `h`, `context`, and each
/// negative.
pub fn sgns_pair_grad<T: Real>(
    h: &[T],
    context: &[T],
    negatives: &[&[T]],
) -> (Vec<T>, Vec<T>, Vec<Vec<T>>) {
    let dot = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    let mut dh = vec![T::zero(); h.len()];
    let g = sigmoid(dot(context, h)) - T::one();
    for (d, &c) in dh.iter_mut().zip(context) {
        *d += g * c;
    }
    let dc = h.iter().map(|&x| g * x).collect();
    let dn = negatives
        .iter()
        .map(|n| {
            let g = sigmoid(dot(n, h));
            for (d, &v) in dh.iter_mut().zip(n.iter()) {
                *d += g * v;
            }
            h.iter().map(|&x| g * x).collect()
        })
        .collect();
    (dh, dc, dn)
}

fn fnv1a(bytes: &[u8]) -> u32 {
    let mut hash: u32 = 2166136261;
    for &b in bytes {
        hash ^= b as u32;
        hash = hash.wrapping_mul(16777619);
    }
    hash
}

/// Bucket ids of the character n-grams of `<word>`.
fn ngram_buckets(word: &str, (lo, hi): (usize, usize), buckets: usize) -> Vec<usize> {
    let chars: Vec<char> = format!("<{word}>").chars().collect();
    let mut out = Vec::new();
    for n in lo..=hi {
        for w in chars.windows(n) {
            let gram: String = w.iter().collect();
            // the full bracketed word is the word's own row
            if w.len() == chars.len() {
                continue;
            }
            out.push(fnv1a(gram.as_bytes()) as usize % buckets);
        }
    }
    out
}

/// Negative sampler over the unigram distribution raised to 0.75.
struct Unigram {
    cumulative: Vec<f64>,
}

impl Unigram {
    fn new(counts: &[usize]) -> Self {
        let mut total = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                total += (c as f64).powf(0.75);
                total
            })
            .collect();
        Unigram { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let x = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= x)
            .min(self.cumulative.len() - 1)
    }
}

/// Skip-gram with negative sampling, no frequency subsampling.
///
/// The vocabulary is every token seen at least `min_count` times, ordered
/// by descending count then token. With subwords enabled a token's vector
/// is the mean of its own row and its hashed n-gram rows, both in training
/// and in the returned matrix. Only touched buckets are materialized; each
/// starts from the same distribution as a dense table would.
pub fn train_skipgram<S: AsRef<str>>(
    sentences: &[Vec<S>],
    config: &SkipgramConfig,
) -> Result<EmbeddingMatrix> {
    config.validate()?;
    if sentences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("skip-gram corpus has no tokens".into()));
    }
    let key = |t: &S| {
        if config.lowercase {
            t.as_ref().to_lowercase()
        } else {
            t.as_ref().to_string()
        }
    };
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in sentences {
        for t in s {
            *counts.entry(key(t)).or_default() += 1;
        }
    }
    let mut vocab: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= config.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no token occurs at least {} times",
            config.min_count
        )));
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.as_str(), i))
        .collect();
    let n = vocab.len();
    let d = config.d;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let uniform_row = |rng: &mut ChaCha8Rng| -> Vec<f32> {
        (0..d).map(|_| (rng.random::<f32>() - 0.5) / d as f32).collect()
    };

    // input rows: one per word, then one per touched bucket
    let mut input: Vec<f32> = (0..n).flat_map(|_| uniform_row(&mut rng)).collect();
    let mut rows_of: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    if let Some(range) = config.subword_range {
        let mut bucket_row: HashMap<usize, usize> = HashMap::new();
        for (i, (w, _)) in vocab.iter().enumerate() {
            for b in ngram_buckets(w, range, config.buckets) {
                let next = n + bucket_row.len();
                let row = *bucket_row.entry(b).or_insert_with(|| {
                    input.extend(uniform_row(&mut rng));
                    next
                });
                rows_of[i].push(row);
            }
        }
    }
    let mut output = vec![0.0f32; n * d];

    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| s.iter().filter_map(|t| index.get(key(t).as_str()).copied()).collect())
        .collect();
    let pairs_per_epoch: usize = encoded
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|i| i.min(config.window) + (s.len() - 1 - i).min(config.window))
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * config.epochs).max(1) as f64;
    let sampler = Unigram::new(&vocab.iter().map(|(_, c)| *c).collect::<Vec<_>>());

    let mut done = 0usize;
    let mut h = vec![0.0f32; d];
    for _ in 0..config.epochs {
        for s in &encoded {
            for (i, &center) in s.iter().enumerate() {
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window).min(s.len() - 1);
                for j in (lo..=hi).filter(|&j| j != i) {
                    let context = s[j];
                    let lr = (config.lr0 * (1.0 - 0.99 * done as f64 / total)) as f32;
                    done += 1;
                    let rows = &rows_of[center];
                    compose(&input, rows, d, &mut h);
                    let negs: Vec<usize> = (0..config.negatives)
                        .map(|_| sampler.sample(&mut rng))
                        .filter(|&k| k != context)
                        .collect();
                    let neg_rows: Vec<&[f32]> =
                        negs.iter().map(|&k| &output[k * d..(k + 1) * d]).collect();
                    let (dh, dc, dn) =
                        sgns_pair_grad(&h, &output[context * d..(context + 1) * d], &neg_rows);
                    for (o, g) in output[context * d..(context + 1) * d].iter_mut().zip(&dc) {
                        *o -= lr * g;
                    }
                    for (&k, g) in negs.iter().zip(&dn) {
                        for (o, g) in output[k * d..(k + 1) * d].iter_mut().zip(g) {
                            *o -= lr * g;
                        }
                    }
                    let share = lr / rows.len() as f32;
                    for &r in rows {
                        for (v, g) in input[r * d..(r + 1) * d].iter_mut().zip(&dh) {
                            *v -= share * g;
                        }
                    }
                }
            }
        }
    }

    let mut vectors = Vec::with_capacity(n * d);
    for rows in &rows_of {
        compose(&input, rows, d, &mut h);
        vectors.extend_from_slice(&h);
    }
    EmbeddingMatrix::new(vocab.into_iter().map(|(w, _)| w).collect(), vectors, d)
}

fn compose(input: &[f32], rows: &[usize], d: usize, h: &mut [f32]) {
    h.fill(0.0);
    for &r in rows {
        for (a, &v) in h.iter_mut().zip(&input[r * d..(r + 1) * d]) {
            *a += v;
        }
    }
    let inv = 1.0 / rows.len() as f32;
    h.iter_mut().for_each(|a| *a *= inv);
}
