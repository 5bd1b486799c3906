//! `GPTC` checkpoint container: config, training position and named f32
//! arrays, with a trailing FNV-1a checksum.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{param_layout, GptConfig, GptParams};
use crate::checksum::checksum;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GPTC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where training stood when the checkpoint was written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainState {
    pub step: u64,
    pub tokens_seen: u64,
    pub cursor_epoch: u64,
    pub cursor_position: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: GptConfig,
    /// Hash of the full training configuration, checked on resume.
    pub config_hash: u64,
    pub state: TrainState,
    pub arrays: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Option<&Tensor<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Like [`Checkpoint::array`], but a missing array is an error.
    pub fn require(&self, name: &str) -> Result<&Tensor<f32>> {
        self.array(name).ok_or_else(|| Error::CorruptFile {
            path: "<checkpoint>".into(),
            reason: format!("missing array {name}"),
        })
    }

    /// Model parameters stored in the checkpoint.
    pub fn params(&self) -> Result<GptParams<f32>> {
        let named = param_layout(&self.config)
            .into_iter()
            .map(|(n, _)| Ok((n.clone(), self.require(&n)?.clone())))
            .collect::<Result<Vec<_>>>()?;
        GptParams::from_named(&self.config, named)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let c = &self.config;
        for v in [c.n_layer, c.n_head, c.d_model, c.vocab_size, c.seq_len] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(c.tie_embeddings as u8);
        out.extend_from_slice(&c.dropout.to_le_bytes());
        out.extend_from_slice(&self.config_hash.to_le_bytes());
        let s = &self.state;
        for v in [s.step, s.tokens_seen, s.cursor_epoch, s.cursor_position] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing GPTC magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersionMismatch {
                path: path.to_path_buf(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(trailer.try_into().unwrap());
        if checksum(body) != stored {
            return Err(corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let short = || corrupt("truncated".into());
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u64().ok_or_else(short)? as usize;
        }
        let tie = r.take(1).ok_or_else(short)?[0] != 0;
        let dropout = f64::from_le_bytes(r.take(8).ok_or_else(short)?.try_into().unwrap());
        let config = GptConfig {
            n_layer: dims[0],
            n_head: dims[1],
            d_model: dims[2],
            vocab_size: dims[3],
            seq_len: dims[4],
            tie_embeddings: tie,
            dropout,
        };
        config.validate()?;
        let config_hash = r.u64().ok_or_else(short)?;
        let mut st = [0u64; 4];
        for v in &mut st {
            *v = r.u64().ok_or_else(short)?;
        }
        let count = r.u32().ok_or_else(short)? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32().ok_or_else(short)? as usize;
            let name = std::str::from_utf8(r.take(len).ok_or_else(short)?)
                .map_err(|_| corrupt("array name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32().ok_or_else(short)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64().ok_or_else(short)? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r
                .take(n.checked_mul(4).ok_or_else(short)?)
                .ok_or_else(short)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self {
            config,
            config_hash,
            state: TrainState {
                step: st[0],
                tokens_seen: st[1],
                cursor_epoch: st[2],
                cursor_position: st[3],
            },
            arrays,
        })
    }

    /// Writes to a temporary sibling, then renames into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let io = |e| Error::io(format!("writing {}", tmp.display()), e);
        let mut file = BufWriter::new(fs::File::create(&tmp).map_err(io)?);
        file.write_all(&self.to_bytes()).map_err(io)?;
        file.into_inner()
            .map_err(|e| io(e.into_error()))?
            .sync_all()
            .map_err(io)?;
        fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Option<&'b [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GptParams;

    fn sample() -> Checkpoint {
        let cfg = GptConfig::tiny(32);
        let p = GptParams::<f32>::init(&cfg, 4).unwrap();
        Checkpoint {
            config: cfg,
            config_hash: 0xabcdef,
            state: TrainState {
                step: 7,
                tokens_seen: 7 * 64,
                cursor_epoch: 1,
                cursor_position: 45,
            },
            arrays: p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.gptc");
        let ck = sample();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(fs::read(&path).unwrap(), ck.to_bytes());
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = sample().to_bytes();
        let p = Path::new("x");
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bytes, p), Err(Error::CorruptFile { .. })));
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes, p),
            Err(Error::FormatVersionMismatch { found: 9, .. })
        ));
        assert!(Checkpoint::from_bytes(b"GPTC", p).is_err());
    }
}
