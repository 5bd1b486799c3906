use crate::error::{Error, Result};

/// Block sizes for the tiled attention kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnTiling {
    pub block_rows: usize,
    pub block_cols: usize,
}

impl Default for AttnTiling {
    fn default() -> Self {
        Self {
            block_rows: 64,
            block_cols: 64,
        }
    }
}

impl AttnTiling {
    pub fn new(block_rows: usize, block_cols: usize) -> Result<Self> {
        let t = Self {
            block_rows,
            block_cols,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_rows == 0 || self.block_cols == 0 {
            return Err(Error::ConfigInvalid(format!(
                "attention blocks must be at least 1x1, got {}x{}",
                self.block_rows, self.block_cols
            )));
        }
        Ok(())
    }
}

/// Transformer shape. Defaults give the 98M-parameter base model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GptConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub tie_embeddings: bool,
    pub dropout: f64,
}

impl Default for GptConfig {
    fn default() -> Self {
        Self {
            n_layer: 12,
            n_head: 12,
            d_model: 768,
            vocab_size: 16384,
            seq_len: 1024,
            tie_embeddings: true,
            dropout: 0.0,
        }
    }
}

impl GptConfig {
    /// The small shape used for gradient checks and desk-scale runs.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            n_layer: 2,
            n_head: 2,
            d_model: 16,
            vocab_size,
            seq_len: 8,
            tie_embeddings: true,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.n_layer == 0 || self.n_head == 0 || self.d_model == 0 {
            return bad("n_layer, n_head and d_model must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_head) {
            return bad(format!(
                "d_model {} is not divisible by n_head {}",
                self.d_model, self.n_head
            ));
        }
        if self.vocab_size == 0 || self.vocab_size > 1 << 16 {
            return bad(format!("vocab_size {} outside 1..=65536", self.vocab_size));
        }
        if self.seq_len == 0 {
            return bad("seq_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }
}

/// Number of scalar parameters, counting a tied head once.
pub fn param_count(cfg: &GptConfig) -> u64 {
    let (v, t, l, d) = (
        cfg.vocab_size as u64,
        cfg.seq_len as u64,
        cfg.n_layer as u64,
        cfg.d_model as u64,
    );
    let head = if cfg.tie_embeddings { 0 } else { v * d };
    v * d + t * d + l * (12 * d * d + 13 * d) + 2 * d + head
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_model_count() {
        assert_eq!(param_count(&GptConfig::default()), 98_425_344);
        let untied = GptConfig {
            tie_embeddings: false,
            ..GptConfig::default()
        };
        assert_eq!(param_count(&untied), 111_008_256);
    }

    #[test]
    fn hand_summed_count() {
        let cfg = GptConfig {
            n_layer: 1,
            n_head: 1,
            d_model: 2,
            vocab_size: 4,
            seq_len: 3,
            tie_embeddings: true,
            dropout: 0.0,
        };
        assert_eq!(param_count(&cfg), 92);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = GptConfig {
            n_head: 5,
            ..GptConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
        assert!(AttnTiling::new(0, 4).is_err());
    }
}
