use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{BYTE_PIECES, WORD_MARKER};
use crate::checksum::{checksum, ChecksumWriter};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const VOCAB_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"BPEV";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceKind {
    Special,
    Byte(u8),
    Char(char),
    Merged,
}

/// A learned subword inventory.
#[derive(Debug, Clone)]
pub struct BpeVocab {
    pieces: Vec<String>,
    n_special: usize,
    n_chars: usize,
    merges: Vec<(TokenId, TokenId)>,
    char_ids: HashMap<char, TokenId>,
    merge_ranks: HashMap<(TokenId, TokenId), u32>,
}

impl PartialEq for BpeVocab {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces
            && self.n_special == other.n_special
            && self.n_chars == other.n_chars
            && self.merges == other.merges
    }
}

impl Eq for BpeVocab {}

pub(crate) fn byte_piece_text(b: u8) -> String {
    format!("<0x{b:02X}>")
}

impl BpeVocab {
    /// Assembles a vocabulary from its parts, checking every structural
    /// invariant. Merge outputs get ids after the character pieces, in rank
    /// order.
    pub fn from_parts(
        specials: &[String],
        chars: &[char],
        merges: Vec<(TokenId, TokenId)>,
    ) -> Result<Self> {
        let mut pieces: Vec<String> = specials.to_vec();
        pieces.extend((0..=255u8).map(byte_piece_text));
        pieces.extend(chars.iter().map(|c| c.to_string()));
        let first_merge = pieces.len();
        for (rank, &(l, r)) in merges.iter().enumerate() {
            let next = (first_merge + rank) as TokenId;
            if l >= next || r >= next {
                return Err(Error::ConfigInvalid(format!(
                    "merge {rank} references a piece that does not exist yet"
                )));
            }
            let text = format!("{}{}", pieces[l as usize], pieces[r as usize]);
            pieces.push(text);
        }
        let vocab = Self::index(pieces, specials.len(), chars.len(), merges)?;
        Ok(vocab)
    }

    fn index(
        pieces: Vec<String>,
        n_special: usize,
        n_chars: usize,
        merges: Vec<(TokenId, TokenId)>,
    ) -> Result<Self> {
        if pieces.len() > u16::MAX as usize + 1 {
            return Err(Error::ConfigInvalid(format!(
                "vocabulary of {} pieces does not fit 16-bit token ids",
                pieces.len()
            )));
        }
        let mut seen = HashMap::with_capacity(pieces.len());
        for (id, p) in pieces.iter().enumerate() {
            if seen.insert(p.as_str(), id).is_some() {
                return Err(Error::ConfigInvalid(format!("duplicate piece {p:?}")));
            }
        }
        let first_char = n_special + BYTE_PIECES;
        let mut char_ids = HashMap::with_capacity(n_chars);
        for (id, piece) in pieces.iter().enumerate().skip(first_char).take(n_chars) {
            let mut it = piece.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => {
                    char_ids.insert(c, id as TokenId);
                }
                _ => {
                    return Err(Error::ConfigInvalid(format!(
                        "character piece {id} is not a single character"
                    )))
                }
            }
        }
        let merge_ranks = merges
            .iter()
            .enumerate()
            .map(|(rank, &pair)| (pair, rank as u32))
            .collect();
        Ok(Self {
            pieces,
            n_special,
            n_chars,
            merges,
            char_ids,
            merge_ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn n_special(&self) -> usize {
        self.n_special
    }

    pub fn n_chars(&self) -> usize {
        self.n_chars
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn kind(&self, id: TokenId) -> Option<PieceKind> {
        let id = id as usize;
        let first_byte = self.n_special;
        let first_char = first_byte + BYTE_PIECES;
        let first_merge = first_char + self.n_chars;
        if id < first_byte {
            Some(PieceKind::Special)
        } else if id < first_char {
            Some(PieceKind::Byte((id - first_byte) as u8))
        } else if id < first_merge {
            self.pieces[id].chars().next().map(PieceKind::Char)
        } else if id < self.pieces.len() {
            Some(PieceKind::Merged)
        } else {
            None
        }
    }

    pub fn char_id(&self, c: char) -> Option<TokenId> {
        self.char_ids.get(&c).copied()
    }

    pub fn byte_id(&self, b: u8) -> TokenId {
        (self.n_special + b as usize) as TokenId
    }

    pub fn marker_id(&self) -> Option<TokenId> {
        self.char_id(WORD_MARKER)
    }

    /// Rank and output id of merging `left` then `right`, if learned.
    pub fn merge(&self, left: TokenId, right: TokenId) -> Option<(u32, TokenId)> {
        self.merge_ranks.get(&(left, right)).map(|&rank| {
            (
                rank,
                (self.n_special + BYTE_PIECES + self.n_chars) as TokenId + rank,
            )
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ChecksumWriter::new(Vec::new());
        self.write_body(&mut w).expect("writing to a Vec cannot fail");
        w.finish().expect("writing to a Vec cannot fail")
    }

    fn write_body<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VOCAB_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.pieces.len() as u32).to_le_bytes())?;
        w.write_all(&(self.n_special as u32).to_le_bytes())?;
        w.write_all(&(self.n_chars as u32).to_le_bytes())?;
        for p in &self.pieces {
            w.write_all(&(p.len() as u32).to_le_bytes())?;
            w.write_all(p.as_bytes())?;
        }
        w.write_all(&(self.merges.len() as u32).to_le_bytes())?;
        for &(l, r) in &self.merges {
            w.write_all(&l.to_le_bytes())?;
            w.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptFile {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 12 + 8 {
            return Err(corrupt("file truncated"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VOCAB_FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: VOCAB_FORMAT_VERSION,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        if checksum(body) != u64::from_le_bytes(trailer.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let read_err = |_| corrupt("unexpected end of data");
        let vocab_size = r.u32().map_err(read_err)? as usize;
        let n_special = r.u32().map_err(read_err)? as usize;
        let n_chars = r.u32().map_err(read_err)? as usize;
        let mut pieces = Vec::with_capacity(vocab_size.min(1 << 20));
        for _ in 0..vocab_size {
            let n = r.u32().map_err(read_err)? as usize;
            let raw = r.take(n).map_err(read_err)?;
            let s = std::str::from_utf8(raw).map_err(|_| corrupt("piece is not valid UTF-8"))?;
            pieces.push(s.to_string());
        }
        let n_merges = r.u32().map_err(read_err)? as usize;
        let mut merges = Vec::with_capacity(n_merges.min(1 << 20));
        for _ in 0..n_merges {
            merges.push((r.u32().map_err(read_err)?, r.u32().map_err(read_err)?));
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after merge table"));
        }
        if n_special + BYTE_PIECES + n_chars + n_merges != vocab_size {
            return Err(corrupt("piece counts do not add up to vocab_size"));
        }
        let specials = pieces[..n_special].to_vec();
        let chars: Vec<char> = pieces[n_special + BYTE_PIECES..n_special + BYTE_PIECES + n_chars]
            .iter()
            .map(|p| p.chars().next().unwrap_or('\0'))
            .collect();
        let rebuilt = BpeVocab::from_parts(&specials, &chars, merges)
            .map_err(|e| corrupt(&e.to_string()))?;
        if rebuilt.pieces != pieces {
            return Err(corrupt("piece table inconsistent with merges"));
        }
        Ok(rebuilt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing vocabulary {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(format!("reading vocabulary {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ()> {
        let end = self.pos.checked_add(n).ok_or(())?;
        let s = self.buf.get(self.pos..end).ok_or(())?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, ()> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
