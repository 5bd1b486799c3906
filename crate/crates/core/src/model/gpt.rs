use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{field, Layout};
use super::{AttnTiling, GptConfig, GptParams};
use crate::error::{Error, Result};
use crate::tensor::{
    grad_check_dual, grad_check_in, AttentionSpec, AttnBackward, CheckFn, GradCheckReport, Graph, Precision, Scalar,
    Tensor, Var,
};

/// Knobs for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    pub tiling: AttnTiling,
    pub causal: bool,
    pub attn_backward: AttnBackward,
    /// Seed for dropout masks. `None` runs in evaluation mode.
    pub dropout_seed: Option<u64>,
    /// Adds the position table. Turned off only by symmetry tests.
    pub positions: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            tiling: AttnTiling::default(),
            causal: true,
            attn_backward: AttnBackward::Recompute,
            dropout_seed: None,
            positions: true,
        }
    }
}

/// Shape of the token batch fed to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchShape {
    pub batch: usize,
    pub seq: usize,
}

/// Handles produced by [`record_forward`].
pub struct Recorded {
    pub logits: Var,
    pub params: Vec<Var>,
}

struct DropoutMasks {
    rng: Option<ChaCha8Rng>,
    p: f64,
}

impl DropoutMasks {
    fn apply<F: Scalar>(&mut self, g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = F::c(1.0 / (1.0 - self.p));
        let n = g.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < self.p { F::zero() } else { keep })
            .collect();
        g.dropout(x, mask)
    }
}

fn check_tokens(tokens: &[u32], shape: BatchShape, seq_len: usize, vocab: usize) -> Result<()> {
    if tokens.len() != shape.batch * shape.seq || shape.batch == 0 || shape.seq == 0 {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: vec![tokens.len()],
            right: vec![shape.batch, shape.seq],
        });
    }
    if shape.seq > seq_len {
        return Err(Error::ShapeMismatch {
            op: "forward",
            left: vec![shape.batch, shape.seq],
            right: vec![shape.batch, seq_len],
        });
    }
    if let Some(position) = tokens.iter().position(|&t| t as usize >= vocab) {
        return Err(Error::TokenOutOfRange {
            token: tokens[position],
            position,
            vocab_size: vocab,
        });
    }
    Ok(())
}

/// Records the pre-norm transformer on `g`, returning `[B*T, V]` logits.
/// Parameters are bound as gradient leaves when `grads` is set.
pub fn record_forward<'a, F: Scalar>(
    g: &mut Graph<'a, F>,
    params: &'a GptParams<F>,
    tokens: &[u32],
    shape: BatchShape,
    opts: &ForwardOptions,
    grads: bool,
) -> Result<Recorded> {
    let vars: Vec<Var> = params.tensors().iter().map(|t| g.param_as(t, grads)).collect();
    let logits = record_on(g, params.config(), &vars, tokens, shape, opts)?;
    Ok(Recorded {
        logits,
        params: vars,
    })
}

/// Records the model on already-bound parameter leaves, in storage order.
pub fn record_on<F: Scalar>(
    g: &mut Graph<'_, F>,
    cfg: &GptConfig,
    vars: &[Var],
    tokens: &[u32],
    shape: BatchShape,
    opts: &ForwardOptions,
) -> Result<Var> {
    let cfg = *cfg;
    check_tokens(tokens, shape, cfg.seq_len, cfg.vocab_size)?;
    let idx = Layout::new(&cfg);
    let mut drop = DropoutMasks {
        rng: opts.dropout_seed.map(ChaCha8Rng::seed_from_u64),
        p: cfg.dropout,
    };
    let mut x = g.embedding(vars[0], tokens)?;
    if opts.positions {
        let pos: Vec<u32> = (0..shape.batch)
            .flat_map(|_| 0..shape.seq as u32)
            .collect();
        let p = g.embedding(vars[1], &pos)?;
        x = g.add(x, p)?;
    }
    x = drop.apply(g, x)?;
    let spec = AttentionSpec {
        batch: shape.batch,
        seq: shape.seq,
        heads: cfg.n_head,
        tiling: opts.tiling,
        causal: opts.causal,
        backward: opts.attn_backward,
    };
    for l in 0..cfg.n_layer {
        let p = |f: usize| vars[idx.layer(l, f)];
        let h = g.layer_norm(x, p(field::LN1_G), p(field::LN1_B))?;
        let qkv = g.matmul(h, p(field::QKV_W))?;
        let qkv = g.add_bias(qkv, p(field::QKV_B))?;
        let a = g.attention(qkv, spec)?;
        let a = g.matmul(a, p(field::PROJ_W))?;
        let a = g.add_bias(a, p(field::PROJ_B))?;
        let a = drop.apply(g, a)?;
        x = g.add(x, a)?;
        let h = g.layer_norm(x, p(field::LN2_G), p(field::LN2_B))?;
        let f = g.matmul(h, p(field::FC_W))?;
        let f = g.add_bias(f, p(field::FC_B))?;
        let f = g.gelu(f);
        let f = g.matmul(f, p(field::FCPROJ_W))?;
        let f = g.add_bias(f, p(field::FCPROJ_B))?;
        let f = drop.apply(g, f)?;
        x = g.add(x, f)?;
    }
    let (lg, lb) = idx.final_norm();
    let x = g.layer_norm(x, vars[lg], vars[lb])?;
    g.matmul_t(x, vars[idx.head()])
}

/// Logits `[batch, T, vocab]` for a batch of token rows.
pub fn forward<F: Scalar>(
    params: &GptParams<F>,
    tokens: &[u32],
    shape: BatchShape,
    opts: &ForwardOptions,
) -> Result<Tensor<F>> {
    let mut g = Graph::new();
    let rec = record_forward(&mut g, params, tokens, shape, opts, false)?;
    let v = params.config().vocab_size;
    Tensor::new(vec![shape.batch, shape.seq, v], g.value(rec.logits).to_vec())
}

/// Mean natural-log cross-entropy of `[.., V]` logits against targets.
pub fn loss<F: Scalar>(logits: &Tensor<F>, targets: &[u32]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.param(logits);
    let out = g.cross_entropy(l, targets)?;
    Ok(g.scalar(out).f64())
}

/// Loss and per-tensor gradients for one micro-batch.
pub fn loss_and_grads<F: Scalar>(
    params: &GptParams<F>,
    inputs: &[u32],
    targets: &[u32],
    shape: BatchShape,
    opts: &ForwardOptions,
) -> Result<(f64, Vec<Vec<F>>)> {
    let mut g = Graph::new();
    let rec = record_forward(&mut g, params, inputs, shape, opts, true)?;
    let loss = g.cross_entropy(rec.logits, targets)?;
    let value = g.scalar(loss).f64();
    if !value.is_finite() {
        return Err(Error::NonFiniteValue(format!("loss {value}")));
    }
    let grads = g.backward(loss)?;
    let out = rec
        .params
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.wrt(v, t.numel()))
        .collect();
    Ok((value, out))
}

/// Loss only, without recording gradients.
pub fn eval_loss<F: Scalar>(
    params: &GptParams<F>,
    inputs: &[u32],
    targets: &[u32],
    shape: BatchShape,
    opts: &ForwardOptions,
) -> Result<f64> {
    let mut g = Graph::new();
    let rec = record_forward(&mut g, params, inputs, shape, opts, false)?;
    let loss = g.cross_entropy(rec.logits, targets)?;
    Ok(g.scalar(loss).f64())
}

/// The full model loss as a function of its parameters, for gradient checks.
pub struct ModelLoss {
    pub config: GptConfig,
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub shape: BatchShape,
    pub opts: ForwardOptions,
}

impl CheckFn for ModelLoss {
    fn record<F: Scalar>(&self, g: &mut Graph<'_, F>, vars: &[Var]) -> Result<Var> {
        let logits = record_on(g, &self.config, vars, &self.inputs, self.shape, &self.opts)?;
        g.cross_entropy(logits, &self.targets)
    }
}

/// End-to-end gradient check of every parameter on random tokens.
pub fn model_grad_check(
    cfg: &GptConfig,
    batch: usize,
    seed: u64,
    precision: Precision,
    eps: f64,
) -> Result<GradCheckReport> {
    let params = GptParams::<f64>::init(cfg, seed)?;
    let f = model_loss_fn(cfg, batch, seed);
    grad_check_in(params.tensors(), eps, precision, &f)
}

/// Both engines against one shared reference sweep, at the 32-bit
/// initial parameters. Returns `(single, double)`.
pub fn model_grad_check_dual(
    cfg: &GptConfig,
    batch: usize,
    seed: u64,
    eps: f64,
) -> Result<(GradCheckReport, GradCheckReport)> {
    let params = GptParams::<f32>::init(cfg, seed)?;
    let f = model_loss_fn(cfg, batch, seed);
    grad_check_dual(params.tensors(), eps, &f)
}

fn model_loss_fn(cfg: &GptConfig, batch: usize, seed: u64) -> ModelLoss {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = BatchShape {
        batch,
        seq: cfg.seq_len,
    };
    let n = batch * cfg.seq_len;
    let mut draw = || -> Vec<u32> {
        (0..n)
            .map(|_| rng.random_range(0..cfg.vocab_size as u32))
            .collect()
    };
    ModelLoss {
        config: *cfg,
        inputs: draw(),
        targets: draw(),
        shape,
        opts: ForwardOptions::default(),
    }
}
