use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checksum::{checksum, ChecksumWriter};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

pub const SHARD_MAGIC: &[u8; 4] = b"NPSH";
pub const SHARD_VERSION: u32 = 1;
pub const DTYPE_U16: u8 = 0;
pub const HEADER_LEN: usize = 21;
pub const SHARD_EXTENSION: &str = "npsh";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardHeader {
    pub version: u32,
    pub token_count: u64,
    pub dtype_code: u8,
    pub vocab_size: u32,
    /// Value of the trailing checksum.
    pub checksum: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardFile {
    pub path: PathBuf,
    pub header: ShardHeader,
}

fn shard_name(index: usize) -> String {
    format!("shard_{index:06}.{SHARD_EXTENSION}")
}

fn write_one(path: &Path, tokens: &[u16], vocab_size: u32) -> std::io::Result<ShardHeader> {
    let tmp = path.with_extension("tmp");
    let result = (|| {
        let file = File::create(&tmp)?;
        let mut w = ChecksumWriter::new(BufWriter::new(file));
        w.write_all(SHARD_MAGIC)?;
        w.write_all(&SHARD_VERSION.to_le_bytes())?;
        w.write_all(&(tokens.len() as u64).to_le_bytes())?;
        w.write_all(&[DTYPE_U16])?;
        w.write_all(&vocab_size.to_le_bytes())?;
        let mut payload = Vec::with_capacity(tokens.len() * 2);
        for t in tokens {
            payload.extend_from_slice(&t.to_le_bytes());
        }
        w.write_all(&payload)?;
        let sum = w.digest();
        let inner = w.finish()?;
        inner.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(ShardHeader {
            version: SHARD_VERSION,
            token_count: tokens.len() as u64,
            dtype_code: DTYPE_U16,
            vocab_size,
            checksum: sum,
        })
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Splits a token stream into shards of exactly `shard_tokens` tokens (the
/// last may be shorter), written as `shard_NNNNNN.npsh` under `out_dir`.
///
/// A shard that fails mid-write is removed.
pub fn write_shards<I>(
    ids: I,
    shard_tokens: usize,
    out_dir: &Path,
    vocab_size: usize,
) -> Result<Vec<ShardFile>>
where
    I: IntoIterator<Item = TokenId>,
{
    if shard_tokens == 0 {
        return Err(Error::ConfigInvalid("shard_tokens must be positive".into()));
    }
    if vocab_size == 0 || vocab_size > u16::MAX as usize + 1 {
        return Err(Error::ConfigInvalid(format!(
            "vocab_size {vocab_size} does not fit 16-bit shard payloads"
        )));
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let mut out = Vec::new();
    let mut buf: Vec<u16> = Vec::with_capacity(shard_tokens.min(1 << 24));
    let flush = |buf: &mut Vec<u16>, out: &mut Vec<ShardFile>| -> Result<()> {
        let path = out_dir.join(shard_name(out.len()));
        let header = write_one(&path, buf, vocab_size as u32)
            .map_err(|e| Error::io(format!("writing shard {}", path.display()), e))?;
        out.push(ShardFile { path, header });
        buf.clear();
        Ok(())
    };
    for (position, id) in ids.into_iter().enumerate() {
        if id as usize >= vocab_size {
            return Err(Error::TokenOutOfRange {
                token: id,
                position,
                vocab_size,
            });
        }
        buf.push(id as u16);
        if buf.len() == shard_tokens {
            flush(&mut buf, &mut out)?;
        }
    }
    if !buf.is_empty() {
        flush(&mut buf, &mut out)?;
    }
    if out.is_empty() {
        return Err(Error::ConfigInvalid("token stream is empty".into()));
    }
    Ok(out)
}

/// Validates a shard held in memory and returns its header.
pub(crate) fn verify_bytes(bytes: &[u8], path: &Path) -> Result<ShardHeader> {
    let corrupt = |offset: usize, reason: String| Error::CorruptShard {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER_LEN + 8 {
        return Err(corrupt(bytes.len(), "file shorter than header and checksum".into()));
    }
    if &bytes[..4] != SHARD_MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SHARD_VERSION {
        return Err(Error::FormatVersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: SHARD_VERSION,
        });
    }
    let token_count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let dtype_code = bytes[16];
    if dtype_code != DTYPE_U16 {
        return Err(corrupt(16, format!("unsupported dtype code {dtype_code}")));
    }
    let vocab_size = u32::from_le_bytes(bytes[17..21].try_into().unwrap());
    let expected_len = (token_count as u128) * 2 + HEADER_LEN as u128 + 8;
    if bytes.len() as u128 != expected_len {
        return Err(corrupt(
            bytes.len().min(expected_len as usize),
            format!(
                "header declares {token_count} tokens but file holds {} bytes",
                bytes.len()
            ),
        ));
    }
    let payload_end = bytes.len() - 8;
    for (i, pair) in bytes[HEADER_LEN..payload_end].chunks_exact(2).enumerate() {
        let t = u16::from_le_bytes([pair[0], pair[1]]);
        if t as u32 >= vocab_size {
            return Err(corrupt(
                HEADER_LEN + 2 * i,
                format!("token {t} not below vocab_size {vocab_size}"),
            ));
        }
    }
    let stored = u64::from_le_bytes(bytes[payload_end..].try_into().unwrap());
    if checksum(&bytes[..payload_end]) != stored {
        return Err(corrupt(payload_end, "checksum mismatch".into()));
    }
    Ok(ShardHeader {
        version,
        token_count,
        dtype_code,
        vocab_size,
        checksum: stored,
    })
}

/// Full validation of a shard file: magic, version, dtype, length, token
/// range and checksum.
pub fn verify_shard(path: &Path) -> Result<ShardHeader> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading shard {}", path.display()), e))?;
    verify_bytes(&bytes, path)
}

/// Reads and validates a shard, returning its tokens.
pub fn read_shard(path: &Path) -> Result<(ShardHeader, Vec<u16>)> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("reading shard {}", path.display()), e))?;
    let header = verify_bytes(&bytes, path)?;
    let tokens = bytes[HEADER_LEN..bytes.len() - 8]
        .chunks_exact(2)
        .map(|p| u16::from_le_bytes([p[0], p[1]]))
        .collect();
    Ok((header, tokens))
}

/// Shard files in a directory, in filename order.
pub fn list_shards(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut paths = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some(SHARD_EXTENSION) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(n: u32, shard_tokens: usize) -> (tempfile::TempDir, Vec<ShardFile>) {
        let dir = tempfile::tempdir().unwrap();
        let files = write_shards(0..n, shard_tokens, dir.path(), 1000).unwrap();
        (dir, files)
    }

    #[test]
    fn arithmetic_split() {
        let (_d, files) = write(25, 10);
        let sizes: Vec<u64> = files.iter().map(|f| f.header.token_count).collect();
        assert_eq!(sizes, vec![10, 10, 5]);
        let (_d, files) = write(10, 10);
        assert_eq!(files.len(), 1);
        assert_eq!(files[0].header.token_count, 10);
    }

    #[test]
    fn concatenation_reproduces_stream() {
        let (dir, files) = write(25, 10);
        let listed = list_shards(dir.path()).unwrap();
        assert_eq!(listed, files.iter().map(|f| f.path.clone()).collect::<Vec<_>>());
        let all: Vec<u16> = listed
            .iter()
            .flat_map(|p| read_shard(p).unwrap().1)
            .collect();
        assert_eq!(all, (0..25).collect::<Vec<u16>>());
    }

    #[test]
    fn layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_shards([1u32, 258], 10, dir.path(), 300).unwrap();
        let bytes = fs::read(&files[0].path).unwrap();
        let mut expect = b"NPSH".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&2u64.to_le_bytes());
        expect.push(0);
        expect.extend_from_slice(&300u32.to_le_bytes());
        expect.extend_from_slice(&[1, 0, 2, 1]);
        let sum = checksum(&expect);
        expect.extend_from_slice(&sum.to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(files[0].header.checksum, sum);
    }

    #[test]
    fn verify_fresh_shard() {
        let (_d, files) = write(25, 10);
        for f in &files {
            assert_eq!(verify_shard(&f.path).unwrap(), f.header);
        }
    }

    #[test]
    fn flipped_payload_byte_detected() {
        let (_d, files) = write(25, 10);
        let p = &files[0].path;
        let mut bytes = fs::read(p).unwrap();
        bytes[HEADER_LEN + 3] ^= 0x01;
        fs::write(p, &bytes).unwrap();
        assert!(matches!(verify_shard(p), Err(Error::CorruptShard { .. })));
    }

    #[test]
    fn out_of_range_token_reports_offset() {
        let (_d, files) = write(25, 10);
        let p = &files[0].path;
        let mut bytes = fs::read(p).unwrap();
        // Token 4 becomes 1000 == vocab_size; checksum recomputed so only the
        // range check can catch it.
        let off = HEADER_LEN + 2 * 4;
        bytes[off..off + 2].copy_from_slice(&1000u16.to_le_bytes());
        let n = bytes.len();
        let sum = checksum(&bytes[..n - 8]);
        bytes[n - 8..].copy_from_slice(&sum.to_le_bytes());
        fs::write(p, &bytes).unwrap();
        match verify_shard(p) {
            Err(Error::CorruptShard { offset, .. }) => assert_eq!(offset, off as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_and_truncation() {
        let (_d, files) = write(25, 10);
        let p = &files[0].path;
        let mut bytes = fs::read(p).unwrap();
        bytes[4] = 9;
        fs::write(p, &bytes).unwrap();
        assert!(matches!(
            verify_shard(p),
            Err(Error::FormatVersionMismatch { found: 9, .. })
        ));
        let p = &files[1].path;
        let bytes = fs::read(p).unwrap();
        fs::write(p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(verify_shard(p), Err(Error::CorruptShard { .. })));
    }

    #[test]
    fn rejects_bad_input() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_shards(std::iter::empty(), 10, dir.path(), 100).is_err());
        assert!(matches!(
            write_shards([1, 100], 10, dir.path(), 100),
            Err(Error::TokenOutOfRange { token: 100, position: 1, .. })
        ));
        assert!(list_shards(dir.path()).unwrap().is_empty());
    }
}
