//! Framework-free pretraining toolkit for a GPT-2-class decoder-only language
//! model over Devanagari text.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! - [`corpus`]: cleaning and line-level deduplication of raw text files
//! - [`tokenizer`]: byte-pair-encoding training, encode and decode
//! - [`shards`]: fixed-format binary token shards and batch serving
//! - [`tensor`]: dense arrays with reverse-mode gradients
//! - [`model`]: the transformer, including tiled online-softmax attention
//! - [`trainer`]: AdamW, warmup plus cosine schedule, gradient accumulation
//! - [`eval`]: validation loss, perplexity and sampling

pub mod checksum;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod shards;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};

/// Toolkit version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
