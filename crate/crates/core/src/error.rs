use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error families, mapped one-to-one onto CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
    Io,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
            ErrorClass::Io => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    InvalidId { id: u32, vocab_size: usize },

    #[error("{path}: format version {found} not supported (expected {expected})")]
    FormatVersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: corrupt file: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("{path}: corrupt shard at byte {offset}: {reason}")]
    CorruptShard {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("dataset split is empty")]
    SplitEmpty,

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),

    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("token {token} at position {position} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange {
        token: u32,
        position: usize,
        vocab_size: usize,
    },

    #[error("step {step} outside schedule of {total_steps} steps")]
    StepOutOfRange { step: u64, total_steps: u64 },

    #[error("prompt is {tokens} tokens, context window is {seq_len}")]
    PromptTooLong { tokens: usize, seq_len: usize },

    #[error("vocabulary size mismatch: {left_name} has {left}, {right_name} has {right}")]
    VocabMismatch {
        left_name: String,
        left: usize,
        right_name: String,
        right: usize,
    },

    #[error("checkpoint config hash {found:016x} does not match run config hash {expected:016x}")]
    ConfigHashMismatch { expected: u64, found: u64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ConfigInvalid(_) => ErrorClass::Usage,
            Error::CorpusTooSmall(_)
            | Error::InvalidId { .. }
            | Error::FormatVersionMismatch { .. }
            | Error::CorruptFile { .. }
            | Error::CorruptShard { .. }
            | Error::SplitEmpty
            | Error::TokenOutOfRange { .. }
            | Error::PromptTooLong { .. }
            | Error::VocabMismatch { .. }
            | Error::ConfigHashMismatch { .. } => ErrorClass::Data,
            Error::ShapeMismatch { .. }
            | Error::NotScalarLoss(_)
            | Error::NonFiniteValue(_)
            | Error::NonFiniteGradient(_)
            | Error::StepOutOfRange { .. } => ErrorClass::Numeric,
            Error::Io { .. } => ErrorClass::Io,
        }
    }
}
