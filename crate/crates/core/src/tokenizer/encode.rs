use std::collections::HashMap;

use super::vocab::{BpeVocab, PieceKind, TokenId};
use super::{BOS_ID, EOS_ID, WORD_MARKER};
use crate::error::{Error, Result};

/// Splits text into marker-initial segments. A leading marker is always
/// inserted, and each space becomes a marker that opens a new segment.
pub(crate) fn segments(text: &str) -> impl Iterator<Item = Vec<char>> + '_ {
    let mut out: Vec<Vec<char>> = Vec::new();
    if !text.is_empty() {
        out.push(vec![WORD_MARKER]);
        for c in text.chars() {
            if c == ' ' {
                out.push(vec![WORD_MARKER]);
            } else {
                out.last_mut().unwrap().push(c);
            }
        }
    }
    out.into_iter()
}

/// Initial symbols for one segment: character pieces where covered, byte
/// pieces otherwise. The literal marker codepoint always takes byte fallback,
/// the first symbol of a segment being the only true marker.
fn initial_symbols(vocab: &BpeVocab, seg: &[char], out: &mut Vec<TokenId>) {
    for (i, &c) in seg.iter().enumerate() {
        let covered = if c == WORD_MARKER && i > 0 {
            None
        } else {
            vocab.char_id(c)
        };
        match covered {
            Some(id) => out.push(id),
            None => {
                let mut buf = [0u8; 4];
                for &b in c.encode_utf8(&mut buf).as_bytes() {
                    out.push(vocab.byte_id(b));
                }
            }
        }
    }
}

/// Applies merges by ascending rank until none applies. Each round rewrites
/// every non-overlapping occurrence of the best pair, left to right.
pub(crate) fn apply_merges(vocab: &BpeVocab, symbols: &mut Vec<TokenId>) {
    loop {
        let best = symbols
            .windows(2)
            .filter_map(|w| vocab.merge(w[0], w[1]))
            .min_by_key(|&(rank, _)| rank);
        let Some((rank, new_id)) = best else { break };
        let (left, right) = vocab.merges()[rank as usize];
        let mut merged = Vec::with_capacity(symbols.len());
        let mut i = 0;
        while i < symbols.len() {
            if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                merged.push(new_id);
                i += 2;
            } else {
                merged.push(symbols[i]);
                i += 1;
            }
        }
        *symbols = merged;
    }
}

fn encode_segment(vocab: &BpeVocab, seg: &[char]) -> Vec<TokenId> {
    let mut symbols = Vec::with_capacity(seg.len());
    initial_symbols(vocab, seg, &mut symbols);
    apply_merges(vocab, &mut symbols);
    symbols
}

/// Encodes text into token ids. Never fails: characters without a piece are
/// spelled with byte pieces.
pub fn encode(text: &str, vocab: &BpeVocab, add_bos: bool, add_eos: bool) -> Vec<TokenId> {
    let mut ids = Vec::new();
    if add_bos {
        ids.push(BOS_ID);
    }
    for seg in segments(text) {
        ids.extend(encode_segment(vocab, &seg));
    }
    if add_eos {
        ids.push(EOS_ID);
    }
    ids
}

/// Decodes ids back into text. Special tokens render as nothing and the
/// leading marker added by [`encode`] is removed.
///
/// Byte pieces that do not form valid UTF-8 are rendered as U+FFFD with a
/// logged warning.
pub fn decode(ids: &[TokenId], vocab: &BpeVocab) -> Result<String> {
    let mut bytes = Vec::with_capacity(ids.len() * 4);
    for &id in ids {
        match vocab.kind(id) {
            None => {
                return Err(Error::InvalidId {
                    id,
                    vocab_size: vocab.len(),
                })
            }
            Some(PieceKind::Special) => {}
            Some(PieceKind::Byte(b)) => bytes.push(b),
            Some(PieceKind::Char(_)) | Some(PieceKind::Merged) => {
                for c in vocab.piece(id).unwrap().chars() {
                    let c = if c == WORD_MARKER { ' ' } else { c };
                    let mut buf = [0u8; 4];
                    bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                }
            }
        }
    }
    let text = match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("byte pieces did not form valid UTF-8; substituting U+FFFD");
            String::from_utf8_lossy(e.as_bytes()).into_owned()
        }
    };
    Ok(match text.strip_prefix(' ') {
        Some(rest) => rest.to_string(),
        None => text,
    })
}

/// Encoder with a per-segment cache, for bulk tokenization of a corpus where
/// words repeat heavily.
pub struct Encoder<'v> {
    vocab: &'v BpeVocab,
    cache: HashMap<Vec<char>, Vec<TokenId>>,
}

impl<'v> Encoder<'v> {
    pub fn new(vocab: &'v BpeVocab) -> Self {
        Self {
            vocab,
            cache: HashMap::new(),
        }
    }

    pub fn encode(&mut self, text: &str, add_bos: bool, add_eos: bool) -> Vec<TokenId> {
        let mut ids = Vec::new();
        if add_bos {
            ids.push(BOS_ID);
        }
        for seg in segments(text) {
            if let Some(hit) = self.cache.get(&seg) {
                ids.extend_from_slice(hit);
            } else {
                let enc = encode_segment(self.vocab, &seg);
                ids.extend_from_slice(&enc);
                self.cache.insert(seg, enc);
            }
        }
        if add_eos {
            ids.push(EOS_ID);
        }
        ids
    }

    /// Piece texts of the segmentation, for display.
    pub fn pieces(&mut self, text: &str) -> Vec<String> {
        self.encode(text, false, false)
            .into_iter()
            .map(|id| self.vocab.piece(id).unwrap_or("").to_string())
            .collect()
    }
}
