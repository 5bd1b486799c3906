//! 64-bit FNV-1a checksums used by every on-disk container.

use std::hash::Hasher;
use std::io::{self, Write};

use fnv::FnvHasher;

/// One-shot checksum of a byte slice.
pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Writer adaptor that checksums everything passing through it.
pub struct ChecksumWriter<W> {
    inner: W,
    hasher: FnvHasher,
}

impl<W: Write> ChecksumWriter<W> {
    pub fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: FnvHasher::default(),
        }
    }

    pub fn digest(&self) -> u64 {
        self.hasher.finish()
    }

    /// Appends the little-endian checksum trailer and returns the inner writer.
    pub fn finish(mut self) -> io::Result<W> {
        let sum = self.hasher.finish();
        self.inner.write_all(&sum.to_le_bytes())?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl<W: Write> Write for ChecksumWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.write(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(checksum(b""), 0xcbf29ce484222325);
        assert_eq!(checksum(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(checksum(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn writer_matches_one_shot() {
        let mut w = ChecksumWriter::new(Vec::new());
        w.write_all(b"foo").unwrap();
        w.write_all(b"bar").unwrap();
        let d = w.digest();
        let out = w.finish().unwrap();
        assert_eq!(d, checksum(b"foobar"));
        assert_eq!(&out[6..], &d.to_le_bytes());
    }
}
