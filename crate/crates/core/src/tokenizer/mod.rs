//! Byte-pair-encoding tokenizer with byte fallback.
//!
//! Vocabulary layout is fixed: special tokens first, then the 256 byte
//! pieces, then single-character pieces (the word-boundary marker first),
//! then one piece per learned merge in rank order.

mod encode;
mod train;
mod vocab;

pub use encode::{decode, encode, Encoder};
pub use train::{stride_sample, train_bpe, train_bpe_with_report, TokenizerConfig, TrainReport};
pub use vocab::{BpeVocab, PieceKind, TokenId, VOCAB_FORMAT_VERSION};

/// Word-boundary marker; stands for a single space in piece texts.
pub const WORD_MARKER: char = '\u{2581}';

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const BOS_ID: TokenId = 2;
pub const EOS_ID: TokenId = 3;

pub const DEFAULT_SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

pub const BYTE_PIECES: usize = 256;
