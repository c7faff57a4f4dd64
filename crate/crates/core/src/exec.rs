//! Execution mode for per-sentence work inside a batch.
//!
//! Work is split into fixed-size chunks whose boundaries do not depend on
//! the mode, and results come back in chunk order, so sequential and
//! parallel runs reduce in the same order and give bit-identical sums.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// `Parallel` when the `parallel` feature is compiled in.
    pub fn available(self) -> ExecMode {
        if cfg!(feature = "parallel") {
            self
        } else {
            ExecMode::Sequential
        }
    }
}

pub(crate) const CHUNK: usize = 8;

/// Maps `f` over `0..n` in chunks of [`CHUNK`] indices; returns one result
/// per chunk, in order.
pub(crate) fn map_chunks<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
{
    let ranges: Vec<_> = (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect();
    match mode.available() {
        ExecMode::Sequential => ranges.into_iter().map(f).collect(),
        ExecMode::Parallel => par_map(ranges, f),
    }
}

/// Maps `f` over items, preserving order.
pub(crate) fn map_items<T, R, F>(mode: ExecMode, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    match mode.available() {
        ExecMode::Sequential => items.into_iter().map(f).collect(),
        ExecMode::Parallel => par_map(items, f),
    }
}

/// Runs `f` inside a pool of `jobs` worker threads, so that parallel maps
/// started from `f` use at most that many.
pub(crate) fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        return pool.install(f);
    }
    let _ = jobs;
    f()
}

#[cfg(feature = "parallel")]
fn par_map<T: Send, R: Send, F: Fn(T) -> R + Sync + Send>(items: Vec<T>, f: F) -> Vec<R> {
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F: Fn(T) -> R>(items: Vec<T>, f: F) -> Vec<R> {
    items.into_iter().map(f).collect()
}
