use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use super::encode::segments;
use super::vocab::{BpeVocab, TokenId};
use super::{BYTE_PIECES, DEFAULT_SPECIALS, WORD_MARKER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    pub vocab_size: usize,
    pub sample_chars: usize,
    pub max_sentence_chars: usize,
    pub character_coverage: f64,
    /// Ordered special tokens. The first four play the roles PAD, UNK, BOS
    /// and EOS.
    pub special_tokens: Vec<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16_384,
            sample_chars: 8_000_000,
            max_sentence_chars: 8192,
            character_coverage: 0.9995,
            special_tokens: DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.character_coverage > 0.0 && self.character_coverage <= 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "character_coverage {} outside (0, 1]",
                self.character_coverage
            )));
        }
        if self.special_tokens.len() < 4 {
            return Err(Error::ConfigInvalid(
                "need at least the PAD, UNK, BOS and EOS special tokens".into(),
            ));
        }
        if self.vocab_size > u16::MAX as usize + 1 {
            return Err(Error::ConfigInvalid(format!(
                "vocab_size {} exceeds the 16-bit token range",
                self.vocab_size
            )));
        }
        if self.vocab_size <= self.special_tokens.len() + BYTE_PIECES {
            return Err(Error::ConfigInvalid(format!(
                "vocab_size {} leaves no room beyond {} reserved pieces",
                self.vocab_size,
                self.special_tokens.len() + BYTE_PIECES
            )));
        }
        if self.sample_chars == 0 || self.max_sentence_chars == 0 {
            return Err(Error::ConfigInvalid(
                "sample_chars and max_sentence_chars must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Diagnostics from a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub sampled_lines: usize,
    pub sampled_chars: usize,
    /// Pair frequency of each merge at the moment it was selected, by rank.
    pub merge_frequencies: Vec<u64>,
    pub warnings: Vec<String>,
}

/// Cuts a line longer than `max_chars` at the last space inside the limit,
/// or hard at the limit when there is none.
fn truncate_sentence(line: &str, max_chars: usize) -> &str {
    match line.char_indices().nth(max_chars) {
        None => line,
        Some((limit, _)) => match line[..limit].rfind(' ') {
            Some(cut) if cut > 0 => &line[..cut],
            _ => &line[..limit],
        },
    }
}

/// Deterministic stride sample: every k-th line starting at `seed mod k`,
/// where k spreads the sample over the whole corpus, until `sample_chars`
/// characters are collected.
pub fn stride_sample<I, S>(
    lines: I,
    total_chars: usize,
    cfg: &TokenizerConfig,
    seed: u64,
) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let stride = total_chars.div_ceil(cfg.sample_chars).max(1);
    let phase = (seed % stride as u64) as usize;
    let mut out = Vec::new();
    let mut taken = 0usize;
    for (i, line) in lines.into_iter().enumerate() {
        if taken >= cfg.sample_chars {
            break;
        }
        if i % stride != phase {
            continue;
        }
        let line = truncate_sentence(line.as_ref(), cfg.max_sentence_chars);
        if line.is_empty() {
            continue;
        }
        taken += line.chars().count();
        out.push(line.to_string());
    }
    out
}

pub fn train_bpe<S: AsRef<str>>(
    corpus: &[S],
    cfg: &TokenizerConfig,
    seed: u64,
) -> Result<BpeVocab> {
    train_bpe_with_report(corpus, cfg, seed).map(|(v, _)| v)
}

/// Trains a vocabulary of exactly `cfg.vocab_size` pieces.
pub fn train_bpe_with_report<S: AsRef<str>>(
    corpus: &[S],
    cfg: &TokenizerConfig,
    seed: u64,
) -> Result<(BpeVocab, TrainReport)> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    let total_chars: usize = corpus.iter().map(|l| l.as_ref().chars().count()).sum();
    if total_chars < cfg.sample_chars {
        let msg = format!(
            "corpus holds {total_chars} characters, fewer than the {} requested; training on all of it",
            cfg.sample_chars
        );
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    let sample = stride_sample(corpus.iter().map(AsRef::as_ref), total_chars, cfg, seed);
    report.sampled_lines = sample.len();
    report.sampled_chars = sample.iter().map(|l| l.chars().count()).sum();

    // Unique segments in order of first appearance, with counts.
    let mut seg_index: HashMap<Vec<char>, usize> = HashMap::new();
    let mut seg_list: Vec<(Vec<char>, u64)> = Vec::new();
    for line in &sample {
        for seg in segments(line) {
            match seg_index.get(&seg) {
                Some(&i) => seg_list[i].1 += 1,
                None => {
                    seg_index.insert(seg.clone(), seg_list.len());
                    seg_list.push((seg, 1));
                }
            }
        }
    }
    drop(seg_index);

    // Character frequencies; a literal marker codepoint inside a segment is
    // never given a piece.
    let mut char_stats: HashMap<char, (u64, usize)> = HashMap::new();
    let mut order = 0usize;
    let mut total_occ = 0u64;
    for (seg, count) in &seg_list {
        for (i, &c) in seg.iter().enumerate() {
            if c == WORD_MARKER && i > 0 {
                continue;
            }
            let e = char_stats.entry(c).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += count;
            total_occ += count;
        }
    }
    if total_occ == 0 {
        return Err(Error::CorpusTooSmall("sample contains no characters".into()));
    }
    let mut ranked: Vec<(char, u64, usize)> =
        char_stats.into_iter().map(|(c, (n, o))| (c, n, o)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let target = cfg.character_coverage * total_occ as f64;
    let mut covered_occ = 0u64;
    let mut chars: Vec<char> = vec![WORD_MARKER];
    for &(c, n, _) in &ranked {
        if covered_occ as f64 >= target {
            break;
        }
        covered_occ += n;
        if c != WORD_MARKER {
            chars.push(c);
        }
    }

    let n_special = cfg.special_tokens.len();
    let first_char = n_special + BYTE_PIECES;
    let reserved = first_char + chars.len();
    if cfg.vocab_size <= reserved {
        return Err(Error::ConfigInvalid(format!(
            "vocab_size {} must exceed {} reserved pieces ({} special, {} byte, {} character)",
            cfg.vocab_size,
            reserved,
            n_special,
            BYTE_PIECES,
            chars.len()
        )));
    }
    let budget = cfg.vocab_size - reserved;
    let char_id: HashMap<char, TokenId> = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, (first_char + i) as TokenId))
        .collect();

    // Words are maximal runs of covered characters; uncovered ones separate
    // them because byte pieces never merge.
    let mut word_index: HashMap<Vec<TokenId>, usize> = HashMap::new();
    let mut words: Vec<Vec<TokenId>> = Vec::new();
    let mut word_counts: Vec<u64> = Vec::new();
    for (seg, count) in &seg_list {
        let mut run: Vec<TokenId> = Vec::new();
        let mut flush = |run: &mut Vec<TokenId>| {
            if run.len() >= 2 {
                match word_index.get(run.as_slice()) {
                    Some(&i) => word_counts[i] += count,
                    None => {
                        word_index.insert(run.clone(), words.len());
                        words.push(run.clone());
                        word_counts.push(*count);
                    }
                }
            }
            run.clear();
        };
        for (i, &c) in seg.iter().enumerate() {
            let id = if c == WORD_MARKER && i > 0 {
                None
            } else {
                char_id.get(&c).copied()
            };
            match id {
                Some(id) => run.push(id),
                None => flush(&mut run),
            }
        }
        flush(&mut run);
    }
    drop(word_index);
    drop(seg_list);

    let mut piece_texts: Vec<String> = cfg.special_tokens.clone();
    piece_texts.extend((0..=255u8).map(super::vocab::byte_piece_text));
    piece_texts.extend(chars.iter().map(|c| c.to_string()));
    let mut existing: HashSet<String> = piece_texts.iter().cloned().collect();

    let mut state = PairState::new(&words, &word_counts);
    let mut merges: Vec<(TokenId, TokenId)> = Vec::with_capacity(budget);

    while merges.len() < budget {
        let Some((pair, freq)) = state.best(&words, &piece_texts) else {
            return Err(Error::CorpusTooSmall(format!(
                "sample supports only {} merges, {} needed for a vocabulary of {}",
                merges.len(),
                budget,
                cfg.vocab_size
            )));
        };
        let text = format!(
            "{}{}",
            piece_texts[pair.0 as usize],
            piece_texts[pair.1 as usize]
        );
        if existing.contains(&text) {
            state.ban(pair);
            continue;
        }
        let new_id = piece_texts.len() as TokenId;
        state.merge(pair, new_id, &mut words, &word_counts);
        existing.insert(text.clone());
        piece_texts.push(text);
        merges.push(pair);
        report.merge_frequencies.push(freq);
    }

    let vocab = BpeVocab::from_parts(&cfg.special_tokens, &chars, merges)?;
    debug_assert_eq!(vocab.pieces(), piece_texts.as_slice());
    Ok((vocab, report))
}

type Pair = (TokenId, TokenId);

/// Pair counts with count-ordered buckets and (possibly stale) word postings.
struct PairState {
    counts: HashMap<Pair, u64>,
    buckets: BTreeMap<u64, BTreeSet<Pair>>,
    postings: HashMap<Pair, BTreeSet<usize>>,
    banned: HashSet<Pair>,
}

impl PairState {
    fn new(words: &[Vec<TokenId>], counts: &[u64]) -> Self {
        let mut s = Self {
            counts: HashMap::new(),
            buckets: BTreeMap::new(),
            postings: HashMap::new(),
            banned: HashSet::new(),
        };
        let mut initial: HashMap<Pair, u64> = HashMap::new();
        for (w, (word, &n)) in words.iter().zip(counts).enumerate() {
            for p in word.windows(2) {
                let pair = (p[0], p[1]);
                *initial.entry(pair).or_default() += n;
                s.postings.entry(pair).or_default().insert(w);
            }
        }
        for (pair, n) in initial {
            s.set(pair, n);
        }
        s
    }

    fn set(&mut self, pair: Pair, n: u64) {
        let old = self.counts.get(&pair).copied().unwrap_or(0);
        if old == n {
            return;
        }
        if old > 0 {
            if let Some(b) = self.buckets.get_mut(&old) {
                b.remove(&pair);
                if b.is_empty() {
                    self.buckets.remove(&old);
                }
            }
        }
        if n > 0 {
            self.counts.insert(pair, n);
            if !self.banned.contains(&pair) {
                self.buckets.entry(n).or_default().insert(pair);
            }
        } else {
            self.counts.remove(&pair);
        }
    }

    fn ban(&mut self, pair: Pair) {
        let n = self.counts.get(&pair).copied().unwrap_or(0);
        if let Some(b) = self.buckets.get_mut(&n) {
            b.remove(&pair);
            if b.is_empty() {
                self.buckets.remove(&n);
            }
        }
        self.banned.insert(pair);
    }

    /// Highest-count pair; ties go to the earliest first occurrence in the
    /// sample, then to lexicographic order of the piece texts.
    fn best(&self, words: &[Vec<TokenId>], texts: &[String]) -> Option<(Pair, u64)> {
        let (&n, bucket) = self.buckets.last_key_value()?;
        let mut best: Option<((usize, usize), Pair)> = None;
        for &pair in bucket {
            let key = self.first_occurrence(pair, words);
            let better = match &best {
                None => true,
                Some((bk, bp)) => {
                    key < *bk
                        || (key == *bk
                            && (texts[pair.0 as usize].as_str(), texts[pair.1 as usize].as_str())
                                < (texts[bp.0 as usize].as_str(), texts[bp.1 as usize].as_str()))
                }
            };
            if better {
                best = Some((key, pair));
            }
        }
        best.map(|(_, p)| (p, n))
    }

    fn first_occurrence(&self, pair: Pair, words: &[Vec<TokenId>]) -> (usize, usize) {
        if let Some(ws) = self.postings.get(&pair) {
            for &w in ws {
                if let Some(pos) = words[w]
                    .windows(2)
                    .position(|p| p[0] == pair.0 && p[1] == pair.1)
                {
                    return (w, pos);
                }
            }
        }
        (usize::MAX, usize::MAX)
    }

    fn merge(&mut self, pair: Pair, new_id: TokenId, words: &mut [Vec<TokenId>], counts: &[u64]) {
        let affected = self.postings.remove(&pair).unwrap_or_default();
        let mut delta: BTreeMap<Pair, i64> = BTreeMap::new();
        for w in affected {
            let word = &words[w];
            if !word.windows(2).any(|p| p[0] == pair.0 && p[1] == pair.1) {
                continue;
            }
            let n = counts[w] as i64;
            for p in word.windows(2) {
                *delta.entry((p[0], p[1])).or_default() -= n;
            }
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(word[i]);
                    i += 1;
                }
            }
            for p in merged.windows(2) {
                let q = (p[0], p[1]);
                *delta.entry(q).or_default() += n;
                if q != pair {
                    self.postings.entry(q).or_default().insert(w);
                }
            }
            words[w] = merged;
        }
        for (q, d) in delta {
            if d != 0 {
                let old = self.counts.get(&q).copied().unwrap_or(0) as i64;
                self.set(q, (old + d).max(0) as u64);
            }
        }
    }
}
