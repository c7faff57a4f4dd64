//! Few-shot named entity recognition: a BLSTM-CNN sequence tagger trained
//! from scratch, plus layer-wise transfer from a source-domain model.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod exec;
pub mod grid;
pub mod network;
pub mod numerics;
pub mod optim;
pub mod report;
pub mod seed;
pub mod transfer;

pub use error::{Error, Result};
pub use exec::ExecMode;
