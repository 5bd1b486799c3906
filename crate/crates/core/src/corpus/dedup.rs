use std::collections::HashMap;
use std::fmt::Write as _;

use super::clean::{CleanConfig, DedupScope};
use crate::checksum::checksum;

/// One cleaned document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocRecord {
    pub source_id: String,
    pub text: String,
    pub line_count: usize,
    pub char_count: usize,
}

impl DocRecord {
    pub fn new(source_id: impl Into<String>, text: String) -> Self {
        let line_count = if text.is_empty() { 0 } else { text.lines().count() };
        let char_count = text.chars().count();
        Self {
            source_id: source_id.into(),
            text,
            line_count,
            char_count,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub lines_in: u64,
    pub lines_out: u64,
    pub duplicates_removed: u64,
    pub docs_dropped: u64,
}

impl CorpusStats {
    pub const CSV_HEADER: &'static str =
        "input_bytes,output_bytes,lines_in,lines_out,duplicates_removed,docs_dropped";

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.input_bytes,
            self.output_bytes,
            self.lines_in,
            self.lines_out,
            self.duplicates_removed,
            self.docs_dropped
        )
    }
}

/// Exact-match set keyed by a 64-bit content hash. Hash hits are confirmed by
/// comparing the stored text, so collisions never drop a distinct line.
#[derive(Default)]
struct SeenSet {
    buckets: HashMap<u64, Vec<Box<str>>>,
}

impl SeenSet {
    /// Returns true if `text` was newly inserted.
    fn insert(&mut self, text: &str) -> bool {
        let bucket = self.buckets.entry(checksum(text.as_bytes())).or_default();
        if bucket.iter().any(|s| &**s == text) {
            false
        } else {
            bucket.push(text.into());
            true
        }
    }
}

const FRAGMENT_MAX_CHARS: usize = 48;

fn is_fragment(line: &str, chars: usize) -> bool {
    let terminated = matches!(
        line.chars().last(),
        Some('।' | '॥' | '?' | '"' | '\'' | '”' | '’')
    );
    !terminated && chars < FRAGMENT_MAX_CHARS
}

/// Removes repeated lines (or documents) and lines outside the length bounds.
///
/// Retained lines keep their input order. Documents left with no lines are
/// omitted from the output.
pub fn dedup_corpus(
    docs: impl IntoIterator<Item = DocRecord>,
    cfg: &CleanConfig,
) -> (Vec<DocRecord>, CorpusStats) {
    let mut stats = CorpusStats::default();
    let mut seen = SeenSet::default();
    let mut out = Vec::new();

    for doc in docs {
        stats.input_bytes += doc.text.len() as u64;
        let mut kept: Vec<&str> = Vec::new();
        for line in doc.text.lines() {
            stats.lines_in += 1;
            let chars = line.chars().count();
            if chars < cfg.min_sentence_chars
                || chars > cfg.max_sentence_chars
                || (cfg.drop_fragments && is_fragment(line, chars))
            {
                stats.docs_dropped += 1;
                continue;
            }
            match cfg.dedup_scope {
                DedupScope::ExactLine => {
                    if seen.insert(line) {
                        kept.push(line);
                    } else {
                        stats.duplicates_removed += 1;
                    }
                }
                DedupScope::ExactDocument => kept.push(line),
            }
        }
        if kept.is_empty() {
            continue;
        }
        let text = kept.join("\n");
        if cfg.dedup_scope == DedupScope::ExactDocument && !seen.insert(&text) {
            stats.duplicates_removed += kept.len() as u64;
            continue;
        }
        stats.lines_out += kept.len() as u64;
        stats.output_bytes += text.len() as u64;
        out.push(DocRecord::new(doc.source_id, text));
    }
    (out, stats)
}

/// Human-readable summary of the six counters, with warnings when the
/// counters are inconsistent.
pub fn corpus_report(stats: &CorpusStats) -> String {
    let mut s = String::new();
    let rows = [
        ("input_bytes", stats.input_bytes),
        ("output_bytes", stats.output_bytes),
        ("lines_in", stats.lines_in),
        ("lines_out", stats.lines_out),
        ("duplicates_removed", stats.duplicates_removed),
        ("docs_dropped", stats.docs_dropped),
    ];
    for (name, value) in rows {
        let _ = writeln!(s, "{name:<20}{value:>16}");
    }
    if stats.output_bytes > stats.input_bytes {
        let _ = writeln!(
            s,
            "warning: output_bytes ({}) exceeds input_bytes ({})",
            stats.output_bytes, stats.input_bytes
        );
    }
    if stats.lines_out + stats.duplicates_removed + stats.docs_dropped > stats.lines_in {
        let _ = writeln!(s, "warning: line counters exceed lines_in");
    }
    s
}
