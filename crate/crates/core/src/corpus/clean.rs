use std::sync::LazyLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// How ASCII digits are treated during cleaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DigitPolicy {
    KeepAscii,
    #[default]
    MapToDevanagari,
    Drop,
}

impl std::str::FromStr for DigitPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep" | "keep_ascii" => Ok(DigitPolicy::KeepAscii),
            "map" | "map_to_devanagari" => Ok(DigitPolicy::MapToDevanagari),
            "drop" => Ok(DigitPolicy::Drop),
            other => Err(Error::ConfigInvalid(format!("unknown digit policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DedupScope {
    #[default]
    ExactLine,
    ExactDocument,
}

#[derive(Debug, Clone)]
pub struct CleanConfig {
    /// Sorted, disjoint, inclusive codepoint intervals that survive filtering.
    /// Space and newline are always retained as structure.
    pub keep_ranges: Vec<(char, char)>,
    pub digit_policy: DigitPolicy,
    pub min_sentence_chars: usize,
    pub max_sentence_chars: usize,
    pub dedup_scope: DedupScope,
    /// Drop short lines that lack sentence-final punctuation.
    pub drop_fragments: bool,
}

/// Devanagari (U+0900..U+097F, which includes danda and double danda) and
/// Devanagari Extended (U+A8E0..U+A8FF).
pub const DEVANAGARI_RANGES: [(char, char); 2] =
    [('\u{0900}', '\u{097F}'), ('\u{A8E0}', '\u{A8FF}')];

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            keep_ranges: DEVANAGARI_RANGES.to_vec(),
            digit_policy: DigitPolicy::MapToDevanagari,
            min_sentence_chars: 12,
            max_sentence_chars: 8192,
            dedup_scope: DedupScope::ExactLine,
            drop_fragments: false,
        }
    }
}

impl CleanConfig {
    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in &self.keep_ranges {
            if lo > hi {
                return Err(Error::ConfigInvalid(format!(
                    "keep range {:04X}..{:04X} is reversed",
                    *lo as u32, *hi as u32
                )));
            }
        }
        for w in self.keep_ranges.windows(2) {
            if w[0].1 >= w[1].0 {
                return Err(Error::ConfigInvalid(
                    "keep ranges must be sorted and disjoint".into(),
                ));
            }
        }
        if self.min_sentence_chars == 0 || self.min_sentence_chars >= self.max_sentence_chars {
            return Err(Error::ConfigInvalid(format!(
                "need 0 < min_sentence_chars ({}) < max_sentence_chars ({})",
                self.min_sentence_chars, self.max_sentence_chars
            )));
        }
        Ok(())
    }

    /// Whether `c` may appear in cleaned output.
    pub fn permits(&self, c: char) -> bool {
        if c == ' ' || c == '\n' {
            return true;
        }
        if c.is_ascii_digit() {
            return self.digit_policy == DigitPolicy::KeepAscii;
        }
        self.in_ranges(c)
    }

    fn in_ranges(&self, c: char) -> bool {
        self.keep_ranges
            .binary_search_by(|&(lo, hi)| {
                if c < lo {
                    std::cmp::Ordering::Greater
                } else if c > hi {
                    std::cmp::Ordering::Less
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .is_ok()
    }
}

static SCRIPT_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<script\b.*?</script\s*>").unwrap());
static STYLE_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<style\b.*?</style\s*>").unwrap());
static COMMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<!--.*?-->").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[A-Za-z/!?][^<>]*>").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:\b[a-z][a-z0-9+.\-]*://|\bwww\.)[A-Za-z0-9\-._~:/?#\[\]@!$&'()*+,;=%]*")
        .unwrap()
});
static LATIN_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\p{Latin}0-9_]*\p{Latin}[\p{Latin}0-9_]*").unwrap());

/// Invisible format characters that vanish instead of splitting words.
fn is_format_char(c: char) -> bool {
    matches!(c, '\u{00AD}' | '\u{200B}'..='\u{200F}' | '\u{2060}' | '\u{FEFF}')
}

/// Cleans raw scraped text into normalized, script-filtered lines.
///
/// Steps run in a fixed order: canonical composition, markup removal, URL
/// removal, Latin word removal, per-codepoint filtering with digit mapping,
/// recomposition, then whitespace collapse. Empty lines are dropped, so the
/// result never holds two consecutive whitespace codepoints.
pub fn clean_text(raw: &str, cfg: &CleanConfig) -> String {
    if raw.is_empty() {
        return String::new();
    }
    let text: String = raw.nfc().collect();
    let text = SCRIPT_BLOCK.replace_all(&text, " ");
    let text = STYLE_BLOCK.replace_all(&text, " ");
    let text = COMMENT.replace_all(&text, " ");
    let text = TAG.replace_all(&text, " ");
    let text = URL.replace_all(&text, " ");
    let text = LATIN_WORD.replace_all(&text, " ");

    let mut filtered = String::with_capacity(text.len());
    for c in text.chars() {
        let c = match c {
            '\r' => '\n',
            '0'..='9' => match cfg.digit_policy {
                DigitPolicy::KeepAscii => c,
                DigitPolicy::MapToDevanagari => {
                    char::from_u32(0x0966 + (c as u32 - '0' as u32)).unwrap()
                }
                DigitPolicy::Drop => ' ',
            },
            c if c != '\n' && c.is_whitespace() => ' ',
            c => c,
        };
        if cfg.permits(c) {
            filtered.push(c);
        } else if !is_format_char(c) {
            filtered.push(' ');
        }
    }

    let recomposed: String = filtered.nfc().collect();
    collapse_whitespace(&recomposed)
}

fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.split('\n') {
        let mut words = line.split(' ').filter(|w| !w.is_empty()).peekable();
        if words.peek().is_none() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let mut first = true;
        for w in words {
            if !first {
                out.push(' ');
            }
            out.push_str(w);
            first = false;
        }
    }
    out
}
