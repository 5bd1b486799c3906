use std::fs::File;
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::format::{list_shards, verify_bytes, HEADER_LEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Val,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
        }
    }
}

enum Source {
    Mapped(Mmap),
    Owned(Vec<u16>),
}

impl Source {
    fn len(&self) -> usize {
        match self {
            Source::Mapped(m) => (m.len() - HEADER_LEN - 8) / 2,
            Source::Owned(v) => v.len(),
        }
    }

    fn extend(&self, start: usize, end: usize, out: &mut Vec<u32>) {
        match self {
            Source::Mapped(m) => out.extend(
                m[HEADER_LEN + 2 * start..HEADER_LEN + 2 * end]
                    .chunks_exact(2)
                    .map(|p| u16::from_le_bytes([p[0], p[1]]) as u32),
            ),
            Source::Owned(v) => out.extend(v[start..end].iter().map(|&t| t as u32)),
        }
    }
}

/// An ordered set of shards read as one continuous token stream.
pub struct DatasetSplit {
    role: SplitRole,
    shard_paths: Vec<PathBuf>,
    sources: Vec<Source>,
    starts: Vec<u64>,
    total: u64,
    vocab_size: usize,
}

impl std::fmt::Debug for DatasetSplit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DatasetSplit")
            .field("role", &self.role)
            .field("shards", &self.shard_paths.len())
            .field("tokens", &self.total)
            .field("vocab_size", &self.vocab_size)
            .finish()
    }
}

impl DatasetSplit {
    /// Verifies and memory-maps every shard. All shards must agree on
    /// vocab_size.
    pub fn open(role: SplitRole, shard_paths: Vec<PathBuf>) -> Result<Self> {
        let mut sources = Vec::with_capacity(shard_paths.len());
        let mut vocab_size: Option<usize> = None;
        for p in &shard_paths {
            let file =
                File::open(p).map_err(|e| Error::io(format!("opening {}", p.display()), e))?;
            // SAFETY: shards are immutable once written; the map is read-only.
            let map = unsafe { Mmap::map(&file) }
                .map_err(|e| Error::io(format!("mapping {}", p.display()), e))?;
            let header = verify_bytes(&map, p)?;
            let v = header.vocab_size as usize;
            match vocab_size {
                None => vocab_size = Some(v),
                Some(prev) if prev != v => {
                    return Err(Error::VocabMismatch {
                        left_name: shard_paths[0].display().to_string(),
                        left: prev,
                        right_name: p.display().to_string(),
                        right: v,
                    })
                }
                _ => {}
            }
            sources.push(Source::Mapped(map));
        }
        Ok(Self::assemble(role, shard_paths, sources, vocab_size.unwrap_or(0)))
    }

    /// In-memory split, mainly for tests and tiny experiments.
    pub fn from_tokens(role: SplitRole, tokens: Vec<u16>, vocab_size: usize) -> Self {
        Self::assemble(role, Vec::new(), vec![Source::Owned(tokens)], vocab_size)
    }

    fn assemble(
        role: SplitRole,
        shard_paths: Vec<PathBuf>,
        sources: Vec<Source>,
        vocab_size: usize,
    ) -> Self {
        let mut starts = Vec::with_capacity(sources.len());
        let mut total = 0u64;
        for s in &sources {
            starts.push(total);
            total += s.len() as u64;
        }
        Self {
            role,
            shard_paths,
            sources,
            starts,
            total,
            vocab_size,
        }
    }

    /// Permutes the shard order with a seeded generator.
    pub fn with_shard_order_seed(mut self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.sources.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut slots: Vec<Option<Source>> = self.sources.into_iter().map(Some).collect();
        self.sources = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        if !self.shard_paths.is_empty() {
            self.shard_paths = order.iter().map(|&i| self.shard_paths[i].clone()).collect();
        }
        Self::assemble(self.role, self.shard_paths, self.sources, self.vocab_size)
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn shard_paths(&self) -> &[PathBuf] {
        &self.shard_paths
    }

    pub fn token_count(&self) -> u64 {
        self.total
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Non-overlapping windows of `seq_len + 1` tokens per pass.
    pub fn windows_per_epoch(&self, seq_len: usize) -> u64 {
        if self.total == 0 || seq_len == 0 {
            0
        } else {
            (self.total - 1) / seq_len as u64
        }
    }

    /// Appends tokens `[start, start + len)` of the stream to `out`.
    pub fn read(&self, start: u64, len: usize, out: &mut Vec<u32>) {
        let end = start + len as u64;
        assert!(end <= self.total, "read past end of split");
        let mut shard = match self.starts.binary_search(&start) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let mut pos = start;
        while pos < end {
            // Skip empty shards.
            while self.sources[shard].len() as u64 + self.starts[shard] <= pos {
                shard += 1;
            }
            let local = (pos - self.starts[shard]) as usize;
            let take = ((end - pos) as usize).min(self.sources[shard].len() - local);
            self.sources[shard].extend(local, local + take, out);
            pos += take as u64;
            shard += 1;
        }
    }
}

/// Position in a split's token stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Cursor {
    pub epoch: u64,
    pub position: u64,
}

/// `micro_batch` rows of `seq_len` inputs and their next-token targets,
/// stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub micro_batch: usize,
    pub seq_len: usize,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
}

impl Batch {
    pub fn row_inputs(&self, i: usize) -> &[u32] {
        &self.inputs[i * self.seq_len..(i + 1) * self.seq_len]
    }

    pub fn row_targets(&self, i: usize) -> &[u32] {
        &self.targets[i * self.seq_len..(i + 1) * self.seq_len]
    }
}

/// Serves the next `micro_batch` sequential windows. A window that would run
/// past the end of the stream is dropped and reading restarts at position 0
/// of the next epoch.
pub fn next_batch(
    split: &DatasetSplit,
    cursor: Cursor,
    micro_batch: usize,
    seq_len: usize,
) -> Result<(Batch, Cursor)> {
    if seq_len == 0 || micro_batch == 0 {
        return Err(Error::ConfigInvalid(
            "micro_batch and seq_len must be positive".into(),
        ));
    }
    if split.windows_per_epoch(seq_len) == 0 {
        return Err(Error::SplitEmpty);
    }
    let mut cur = cursor;
    let mut inputs = Vec::with_capacity(micro_batch * seq_len);
    let mut targets = Vec::with_capacity(micro_batch * seq_len);
    let mut window = Vec::with_capacity(seq_len + 1);
    for _ in 0..micro_batch {
        if cur.position + seq_len as u64 + 1 > split.token_count() {
            cur.epoch += 1;
            cur.position = 0;
        }
        window.clear();
        split.read(cur.position, seq_len + 1, &mut window);
        inputs.extend_from_slice(&window[..seq_len]);
        targets.extend_from_slice(&window[1..]);
        cur.position += seq_len as u64;
    }
    Ok((
        Batch {
            micro_batch,
            seq_len,
            inputs,
            targets,
        },
        cur,
    ))
}

/// Optimizer steps that fit in one pass over `total_tokens`.
pub fn steps_per_epoch(total_tokens: u64, micro_batch: usize, grad_accum: usize, seq_len: usize) -> u64 {
    total_tokens / (micro_batch * grad_accum * seq_len) as u64
}

/// Partitions shards into (train, val). Validation takes the last
/// `max(1, round(n * val_fraction))` shards in filename order.
pub fn split_shards(paths: &[PathBuf], val_fraction: f64) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::ConfigInvalid(format!(
            "val_fraction {val_fraction} outside [0, 1)"
        )));
    }
    let n = paths.len();
    let n_val = ((n as f64 * val_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::SplitEmpty);
    }
    Ok((paths[..n - n_val].to_vec(), paths[n - n_val..].to_vec()))
}

/// Opens every shard under `dir` as a (train, val) pair.
pub fn open_dir(dir: &Path, val_fraction: f64) -> Result<(DatasetSplit, DatasetSplit)> {
    let paths = list_shards(dir)?;
    let (train, val) = split_shards(&paths, val_fraction)?;
    let train = DatasetSplit::open(SplitRole::Train, train)?;
    let val = DatasetSplit::open(SplitRole::Val, val)?;
    if train.vocab_size() != val.vocab_size() {
        return Err(Error::VocabMismatch {
            left_name: "train shards".into(),
            left: train.vocab_size(),
            right_name: "val shards".into(),
            right: val.vocab_size(),
        });
    }
    Ok((train, val))
}
