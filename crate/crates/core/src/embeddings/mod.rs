//! Word vectors: the whitespace text format, a skip-gram trainer, and OOV
//! accounting.

mod oov;
mod skipgram;

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{EncodeOptions, Vocab};
use crate::error::{Error, Result};

pub use oov::{oov_report, OovReport};
pub use skipgram::{sgns_pair_grad, sgns_pair_loss, train_skipgram, SkipgramConfig, SUBWORD_BUCKETS};

/// Ordered tokens with one `d`-dimensional row each.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    tokens: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(tokens: Vec<String>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::shape("embedding dimension must be at least 1"));
        }
        if vectors.len() != tokens.len() * dim {
            return Err(Error::shape(format!(
                "{} tokens of dimension {dim} need {} values, got {}",
                tokens.len(),
                tokens.len() * dim,
                vectors.len()
            )));
        }
        if let Some(bad) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!(
                "non-finite value in row for `{}`",
                tokens[bad / dim]
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate embedding token `{t}`")));
            }
        }
        Ok(EmbeddingMatrix {
            tokens,
            vectors,
            dim,
            index,
        })
    }

    /// Rows drawn from `U(-scale, scale)`, deterministic per seed.
    pub fn random(tokens: Vec<String>, dim: usize, scale: f32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..tokens.len() * dim)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        EmbeddingMatrix::new(tokens, vectors, dim)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index_of(token).map(|i| self.row(i))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Element-wise mean of all rows; zeros when empty.
    pub fn mean_row(&self) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for i in 0..self.len() {
            for (a, &v) in acc.iter_mut().zip(self.row(i)) {
                *a += v as f64;
            }
        }
        let n = self.len().max(1) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }

    /// Word vocabulary whose ids 2.. follow this matrix's rows.
    pub fn vocab(&self, options: EncodeOptions) -> Vocab {
        Vocab::new(self.tokens.iter().cloned(), options)
    }

    /// Writes `token v1 .. vd` lines. Values use the shortest decimal that
    /// parses back to the same `f32`, so [`load_embeddings`] round-trips.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.len() {
            write!(out, "{}", self.tokens[i])?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub header_skipped: bool,
    pub duplicates: usize,
}

pub fn load_embeddings<R: BufRead>(source: R) -> Result<EmbeddingMatrix> {
    load_embeddings_with_stats(source).map(|(m, _)| m)
}

pub fn load_embeddings_with_stats<R: BufRead>(source: R) -> Result<(EmbeddingMatrix, LoadStats)> {
    let mut stats = LoadStats::default();
    let mut tokens = Vec::new();
    let mut vectors = Vec::new();
    let mut seen = HashMap::new();
    let mut dim = None;
    let mut first = true;
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            first = false;
            continue;
        };
        let rest: Vec<&str> = fields.collect();
        if first {
            first = false;
            if rest.len() == 1 && token.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
                stats.header_skipped = true;
                continue;
            }
        }
        let d = *dim.get_or_insert(rest.len());
        if rest.len() != d || d == 0 {
            return Err(Error::parse(
                lineno,
                format!("expected {d} components, found {}", rest.len()),
            ));
        }
        let start = vectors.len();
        for field in &rest {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::parse(lineno, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, format!("`{field}` is not finite")));
            }
            vectors.push(v);
        }
        if seen.contains_key(token) {
            vectors.truncate(start);
            stats.duplicates += 1;
            log::warn!("line {lineno}: duplicate token `{token}` ignored");
            continue;
        }
        seen.insert(token.to_string(), tokens.len());
        tokens.push(token.to_string());
    }
    let Some(dim) = dim else {
        return Err(Error::EmptyInput("no embedding vectors".into()));
    };
    Ok((EmbeddingMatrix::new(tokens, vectors, dim)?, stats))
}
