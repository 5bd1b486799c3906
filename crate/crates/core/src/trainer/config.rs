use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::{LrSchedule, OptimHyper};
use crate::checksum::checksum;
use crate::error::{Error, Result};
use crate::model::{AttnTiling, GptConfig};

/// Batch shape and bookkeeping cadence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub micro_batch: usize,
    pub grad_accum: usize,
    /// Informational; `total_steps` decides when training stops.
    pub epochs: u64,
    pub seed: u64,
    /// 0 saves only at the end.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub val_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            micro_batch: 8,
            grad_accum: 64,
            epochs: 2,
            seed: 1337,
            checkpoint_every: 500,
            log_every: 500,
            val_batches: 20,
        }
    }
}

/// Everything a training run is parameterized by.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub model: GptConfig,
    pub train: TrainConfig,
    pub schedule: LrSchedule,
    pub optim: OptimHyper,
    pub tiling: AttnTiling,
}

/// Keys accepted in a config file, in canonical order.
pub const CONFIG_KEYS: [&str; 25] = [
    "n_layer",
    "n_head",
    "d_model",
    "vocab_size",
    "seq_len",
    "tie_embeddings",
    "dropout",
    "micro_batch",
    "grad_accum",
    "epochs",
    "seed",
    "checkpoint_every",
    "log_every",
    "val_batches",
    "block_rows",
    "block_cols",
    "max_lr",
    "min_lr",
    "warmup_steps",
    "total_steps",
    "beta1",
    "beta2",
    "epsilon",
    "weight_decay",
    "clip_norm",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::ConfigInvalid(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    /// Tokens consumed by one optimizer step.
    pub fn tokens_per_step(&self) -> u64 {
        (self.train.micro_batch * self.train.grad_accum * self.model.seq_len) as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.optim.validate()?;
        self.tiling.validate()?;
        let t = &self.train;
        if t.micro_batch == 0 || t.grad_accum == 0 || t.log_every == 0 || t.val_batches == 0 {
            return Err(Error::ConfigInvalid(
                "micro_batch, grad_accum, log_every and val_batches must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t, s, o) = (
            &mut self.model,
            &mut self.train,
            &mut self.schedule,
            &mut self.optim,
        );
        match key {
            "n_layer" => m.n_layer = parse(key, value)?,
            "n_head" => m.n_head = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "vocab_size" => m.vocab_size = parse(key, value)?,
            "seq_len" => m.seq_len = parse(key, value)?,
            "tie_embeddings" => m.tie_embeddings = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "micro_batch" => t.micro_batch = parse(key, value)?,
            "grad_accum" => t.grad_accum = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "val_batches" => t.val_batches = parse(key, value)?,
            "block_rows" => self.tiling.block_rows = parse(key, value)?,
            "block_cols" => self.tiling.block_cols = parse(key, value)?,
            "max_lr" => s.max_lr = parse(key, value)?,
            "min_lr" => s.min_lr = parse(key, value)?,
            "warmup_steps" => s.warmup_steps = parse(key, value)?,
            "total_steps" => s.total_steps = parse(key, value)?,
            "beta1" => o.beta1 = parse(key, value)?,
            "beta2" => o.beta2 = parse(key, value)?,
            "epsilon" => o.epsilon = parse(key, value)?,
            "weight_decay" => o.weight_decay = parse(key, value)?,
            "clip_norm" => o.clip_norm = parse(key, value)?,
            _ => return Err(Error::ConfigInvalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let (m, t, s, o) = (&self.model, &self.train, &self.schedule, &self.optim);
        match key {
            "n_layer" => m.n_layer.to_string(),
            "n_head" => m.n_head.to_string(),
            "d_model" => m.d_model.to_string(),
            "vocab_size" => m.vocab_size.to_string(),
            "seq_len" => m.seq_len.to_string(),
            "tie_embeddings" => m.tie_embeddings.to_string(),
            "dropout" => m.dropout.to_string(),
            "micro_batch" => t.micro_batch.to_string(),
            "grad_accum" => t.grad_accum.to_string(),
            "epochs" => t.epochs.to_string(),
            "seed" => t.seed.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "log_every" => t.log_every.to_string(),
            "val_batches" => t.val_batches.to_string(),
            "block_rows" => self.tiling.block_rows.to_string(),
            "block_cols" => self.tiling.block_cols.to_string(),
            "max_lr" => s.max_lr.to_string(),
            "min_lr" => s.min_lr.to_string(),
            "warmup_steps" => s.warmup_steps.to_string(),
            "total_steps" => s.total_steps.to_string(),
            "beta1" => o.beta1.to_string(),
            "beta2" => o.beta2.to_string(),
            "epsilon" => o.epsilon.to_string(),
            "weight_decay" => o.weight_decay.to_string(),
            "clip_norm" => o.clip_norm.to_string(),
            _ => unreachable!("key list and getters agree"),
        }
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::ConfigInvalid(format!("line {}: expected key = value", n + 1))
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::ConfigInvalid(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    /// Every key in canonical order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    /// Stable hash of the canonical text.
    pub fn hash(&self) -> u64 {
        checksum(self.to_text().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_give_paper_batch() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.tokens_per_step(), 524_288);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn text_round_trip() {
        let text = "# tiny\nn_layer = 2\nd_model=16\nn_head = 2\nmax_lr = 1e-3 # peak\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.n_layer, 2);
        assert_eq!(cfg.schedule.max_lr, 1e-3);
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(RunConfig::default().hash(), cfg.hash());
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        assert!(matches!(RunConfig::parse("learning_rate = 1"), Err(Error::ConfigInvalid(_))));
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("seed = x").is_err());
        assert!(RunConfig::parse("n_head = 5").is_err());
    }
}
