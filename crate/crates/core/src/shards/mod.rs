//! Binary token shards and deterministic batch serving.
//!
//! A shard is a 21-byte header (magic `NPSH`, version u32, token_count u64,
//! dtype u8, vocab_size u32), then `token_count` little-endian u16 tokens,
//! then an FNV-1a 64 checksum over header and payload.

mod dataset;
mod format;

pub use dataset::{
    next_batch, open_dir, split_shards, steps_per_epoch, Batch, Cursor, DatasetSplit, SplitRole,
};
pub use format::{
    list_shards, read_shard, verify_shard, write_shards, ShardFile, ShardHeader, DTYPE_U16,
    HEADER_LEN, SHARD_EXTENSION, SHARD_MAGIC, SHARD_VERSION,
};
