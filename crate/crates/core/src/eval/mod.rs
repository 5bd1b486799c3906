//! Validation loss, perplexity and autoregressive sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{eval_loss, forward, AttnTiling, BatchShape, ForwardOptions, GptParams};
use crate::shards::{next_batch, Cursor, DatasetSplit, SplitRole};
use crate::tokenizer::{decode, encode, BpeVocab, EOS_ID};

/// Natural-exponent perplexity of a natural-log cross-entropy.
pub fn perplexity(loss: f64) -> f64 {
    loss.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub role: SplitRole,
    pub batches_evaluated: usize,
    pub mean_loss: f64,
    pub perplexity: f64,
    pub tokens_evaluated: u64,
}

/// Mean loss over the first `n_batches` batches of `split`, read from
/// position 0. Deterministic for fixed inputs.
pub fn evaluate(
    params: &GptParams<f32>,
    split: &DatasetSplit,
    n_batches: usize,
    micro_batch: usize,
    tiling: AttnTiling,
) -> Result<EvalReport> {
    let seq = params.config().seq_len;
    if split.windows_per_epoch(seq) == 0 {
        return Err(Error::SplitEmpty);
    }
    if n_batches == 0 {
        return Err(Error::ConfigInvalid("n_batches must be at least 1".into()));
    }
    let opts = ForwardOptions {
        tiling,
        ..ForwardOptions::default()
    };
    let mut cursor = Cursor::default();
    let mut total = 0.0;
    for _ in 0..n_batches {
        let (batch, next) = next_batch(split, cursor, micro_batch, seq)?;
        cursor = next;
        let shape = BatchShape {
            batch: micro_batch,
            seq,
        };
        total += eval_loss(params, &batch.inputs, &batch.targets, shape, &opts)?;
    }
    let mean_loss = total / n_batches as f64;
    Ok(EvalReport {
        role: split.role(),
        batches_evaluated: n_batches,
        mean_loss,
        perplexity: perplexity(mean_loss),
        tokens_evaluated: (n_batches * micro_batch * seq) as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub max_new_tokens: usize,
    /// 0 picks the argmax.
    pub temperature: f64,
    /// 0 keeps the whole vocabulary.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 100,
            temperature: 1.0,
            top_k: 0,
            seed: 0,
        }
    }
}

/// Draws one id from a logit row: temperature scaling, then top-k
/// truncation, then renormalization. Ties go to the lower id.
pub fn sample_logits(logits: &[f32], temperature: f64, top_k: usize, rng: &mut impl Rng) -> u32 {
    let argmax = || {
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        best as u32
    };
    if temperature <= 0.0 || top_k == 1 {
        return argmax();
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    if top_k > 0 && top_k < logits.len() {
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        order.truncate(top_k);
        order.sort_unstable();
    }
    let scaled: Vec<f64> = order.iter().map(|&i| logits[i] as f64 / temperature).collect();
    let mx = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&s| (s - mx).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * z;
    for (&i, &w) in order.iter().zip(&weights) {
        if u < w {
            return i as u32;
        }
        u -= w;
    }
    *order.last().expect("non-empty vocabulary") as u32
}

/// Extends `context` by up to `max_new_tokens` ids, stopping after EOS.
/// Once the context reaches `seq_len`, only its last `seq_len - 1` tokens
/// are fed to the model.
pub fn generate_ids(params: &GptParams<f32>, context: &[u32], cfg: &SampleConfig) -> Result<Vec<u32>> {
    let seq_len = params.config().seq_len;
    if context.len() >= seq_len {
        return Err(Error::PromptTooLong {
            tokens: context.len(),
            seq_len,
        });
    }
    let vocab = params.config().vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ids = context.to_vec();
    let mut out = Vec::new();
    for _ in 0..cfg.max_new_tokens {
        let window = if ids.len() >= seq_len {
            &ids[ids.len() - (seq_len - 1)..]
        } else {
            &ids[..]
        };
        let shape = BatchShape {
            batch: 1,
            seq: window.len(),
        };
        let logits = forward(params, window, shape, &ForwardOptions::default())?;
        let last = &logits.data()[(window.len() - 1) * vocab..];
        let next = sample_logits(last, cfg.temperature, cfg.top_k, &mut rng);
        ids.push(next);
        out.push(next);
        if next == EOS_ID {
            break;
        }
    }
    Ok(out)
}

/// Prompt plus continuation, decoded. The prompt is framed with BOS like
/// training lines.
pub fn generate(params: &GptParams<f32>, vocab: &BpeVocab, prompt: &str, cfg: &SampleConfig) -> Result<String> {
    if vocab.len() != params.config().vocab_size {
        return Err(Error::VocabMismatch {
            left_name: "model".into(),
            left: params.config().vocab_size,
            right_name: "tokenizer".into(),
            right: vocab.len(),
        });
    }
    let context = encode(prompt, vocab, true, false);
    let new = generate_ids(params, &context, cfg)?;
    let mut all = context;
    all.extend(new);
    decode(&all, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GptConfig;

    #[test]
    fn perplexity_identity() {
        // Tabulated losses carry four decimals, so the pairs agree to rounding.
        for (loss, ppl) in [(3.0820, 21.80), (9.8449, 18862.37), (5.4479, 232.28)] {
            assert!((perplexity(loss) / ppl - 1.0).abs() < 1e-4, "{loss}");
        }
        assert_eq!(format!("{:.2}", perplexity(3.0820)), "21.80");
        assert_eq!(perplexity(0.0), 1.0);
        assert!((perplexity(16384f64.ln()) / 16384.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_and_top_one_agree() {
        let logits = [0.1f32, 2.0, 2.0, -1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_logits(&logits, 0.0, 0, &mut rng), 1);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(sample_logits(&logits, 1.7, 1, &mut rng), 1);
        }
    }

    #[test]
    fn draws_follow_softmax() {
        let logits = [1.0f32, 0.0, -0.5, 2.0];
        let z: f64 = logits.iter().map(|&x| (x as f64).exp()).sum();
        let n = 100_000;
        let mut counts = [0usize; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..n {
            counts[sample_logits(&logits, 1.0, 0, &mut rng) as usize] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let p = (logits[i] as f64).exp() / z;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{i}: {c} vs {}", n as f64 * p);
        }
    }

    #[test]
    fn top_k_restricts_support() {
        let logits = [3.0f32, 2.9, -5.0, 2.8];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            assert_ne!(sample_logits(&logits, 5.0, 2, &mut rng), 2);
            assert_ne!(sample_logits(&logits, 5.0, 2, &mut rng), 3);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = GptConfig::tiny(32);
        let params = GptParams::init(&cfg, 5).unwrap();
        let s = |seed, temperature| SampleConfig {
            max_new_tokens: 12,
            temperature,
            top_k: 0,
            seed,
        };
        let a = generate_ids(&params, &[2, 9], &s(1, 1.0)).unwrap();
        assert_eq!(a, generate_ids(&params, &[2, 9], &s(1, 1.0)).unwrap());
        let g1 = generate_ids(&params, &[2, 9], &s(1, 0.0)).unwrap();
        let g2 = generate_ids(&params, &[2, 9], &s(99, 0.0)).unwrap();
        assert_eq!(g1, g2);
        assert!(a.len() <= 12 && !a.is_empty());
        let long = vec![4u32; 8];
        assert!(matches!(
            generate_ids(&params, &long, &s(1, 1.0)),
            Err(Error::PromptTooLong { tokens: 8, seq_len: 8 })
        ));
    }
}
