use std::borrow::Cow;

use rayon::prelude::*;

use super::kernels::{self, gelu, gelu_grad};
use super::{numel, total, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::model::attention::{self, HeadStats};
use crate::model::AttnTiling;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which backward the attention node uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttnBackward {
    /// Recompute score tiles from the saved row statistics.
    #[default]
    Recompute,
    /// Dense reference path that materializes the full weight matrix.
    Naive,
}

/// Layout of a fused attention node: input rows are `batch * seq` tokens of
/// width `3 * width` holding query, key and value projections side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSpec {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub tiling: AttnTiling,
    pub causal: bool,
    pub backward: AttnBackward,
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddBias { x: Var, bias: Var },
    Mul(Var, Var),
    Scale(Var, F),
    Sum(Var),
    Reshape(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<F>,
        rstd: Vec<F>,
    },
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<F>,
    },
    Attention {
        qkv: Var,
        spec: AttentionSpec,
        stats: Vec<HeadStats<F>>,
    },
    Dropout { x: Var, mask: Vec<F> },
}

struct Node<'a, F: Scalar> {
    shape: Vec<usize>,
    value: Cow<'a, [F]>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records one forward pass. Parameters are borrowed, not copied; the graph is
/// discarded after [`Graph::backward`].
pub struct Graph<'a, F: Scalar = f32> {
    nodes: Vec<Node<'a, F>>,
}

impl<F: Scalar> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

impl<'a, F: Scalar> Graph<'a, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [F]>, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Binds a tensor as a leaf without copying it.
    pub fn param(&mut self, t: &'a Tensor<F>) -> Var {
        self.push(
            t.shape().to_vec(),
            Cow::Borrowed(t.data()),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Binds a tensor as a leaf, overriding its `requires_grad` flag.
    pub fn param_as(&mut self, t: &'a Tensor<F>, requires_grad: bool) -> Var {
        self.push(
            t.shape().to_vec(),
            Cow::Borrowed(t.data()),
            Op::Leaf,
            requires_grad,
        )
    }

    /// Adds an owned leaf.
    pub fn input(&mut self, shape: Vec<usize>, data: Vec<F>, requires_grad: bool) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(mismatch("input", &shape, &[data.len()]));
        }
        Ok(self.push(shape, Cow::Owned(data), Op::Leaf, requires_grad))
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(mismatch(op, s, &[0, 0])),
        }
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul { a, b, trans_b: false }, rg))
    }

    /// `[m, k] x [n, k]^T`, used for the tied output head.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_t")?;
        let (n, k2) = self.matrix(b, "matmul_t")?;
        if k != k2 {
            return Err(mismatch("matmul_t", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul_nt(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], Cow::Owned(out), Op::MatMul { a, b, trans_b: true }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Add(a, b), rg))
    }

    /// Adds a `[n]` bias to every row of `[.., n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [n] || n == 0 {
            return Err(mismatch("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out: Vec<F> = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::AddBias { x, bias }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("mul", self.shape(a), self.shape(b)));
        }
        let out: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out: Vec<F> = self.value(a).iter().map(|&x| x * s).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::Scale(a, s), rg)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = total(self.value(a).iter().copied());
        let rg = self.rg(a);
        self.push(vec![], Cow::Owned(vec![s]), Op::Sum(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != numel(self.shape(a)) {
            return Err(mismatch("reshape", self.shape(a), &shape));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, Cow::Owned(out), Op::Reshape(a), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out: Vec<F> = self.value(a).iter().map(|&x| gelu(x)).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, Cow::Owned(out), Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization over the last axis followed by the
    /// affine `gamma * x_hat + beta`. A constant row normalizes to zeros.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if n == 0 || self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let rows = self.value(x).len() / n;
        let eps = F::c(LAYER_NORM_EPS);
        let inv_n = F::c(1.0 / n as f64);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = vec![F::zero(); rows * n];
        let mut mean = vec![F::zero(); rows];
        let mut rstd = vec![F::zero(); rows];
        for (r, row) in self.value(x).chunks(n).enumerate() {
            let mu = total(row.iter().copied()) * inv_n;
            let var = total(row.iter().map(|&v| (v - mu) * (v - mu))) * inv_n;
            let rs = F::one() / (var + eps).sqrt();
            for (j, &v) in row.iter().enumerate() {
                out[r * n + j] = (v - mu) * rs * g[j] + b[j];
            }
            mean[r] = mu;
            rstd[r] = rs;
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            Cow::Owned(out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            rg,
        ))
    }

    /// Gathers rows of a `[V, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let (v, d) = self.matrix(table, "embedding")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        let t = self.value(table);
        for (position, &id) in ids.iter().enumerate() {
            if id as usize >= v {
                return Err(Error::TokenOutOfRange {
                    token: id,
                    position,
                    vocab_size: v,
                });
            }
            out.extend_from_slice(&t[id as usize * d..(id as usize + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            Cow::Owned(out),
            Op::Embedding {
                table,
                ids: ids.iter().map(|&i| i as usize).collect(),
            },
            rg,
        ))
    }

    /// Mean natural-log cross-entropy over all rows of `[.., V]` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32]) -> Result<Var> {
        let v = *self.shape(logits).last().unwrap_or(&0);
        let rows = self.value(logits).len().checked_div(v).unwrap_or(0);
        if rows != targets.len() || rows == 0 {
            return Err(mismatch("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        let mut probs = vec![F::zero(); rows * v];
        let mut total = F::zero();
        for (r, row) in self.value(logits).chunks(v).enumerate() {
            let t = targets[r] as usize;
            if t >= v {
                return Err(Error::TokenOutOfRange {
                    token: targets[r],
                    position: r,
                    vocab_size: v,
                });
            }
            let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
            let p = &mut probs[r * v..(r + 1) * v];
            let mut z = F::zero();
            for (pj, &x) in p.iter_mut().zip(row) {
                *pj = (x - mx).exp();
                z += *pj;
            }
            let inv = F::one() / z;
            p.iter_mut().for_each(|x| *x *= inv);
            total += z.ln() + mx - row[t];
        }
        let loss = total / F::c(rows as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            Cow::Owned(vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.iter().map(|&t| t as usize).collect(),
                probs,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention over a fused `[B*T, 3d]`
    /// projection, returning `[B*T, d]`.
    pub fn attention(&mut self, qkv: Var, spec: AttentionSpec) -> Result<Var> {
        let (rows, w3) = self.matrix(qkv, "attention")?;
        if rows != spec.batch * spec.seq || w3 % 3 != 0 || (w3 / 3) % spec.heads.max(1) != 0 || spec.heads == 0
        {
            return Err(mismatch(
                "attention",
                self.shape(qkv),
                &[spec.batch * spec.seq, w3],
            ));
        }
        let width = w3 / 3;
        let dh = width / spec.heads;
        let (q, k, v) = split_heads(self.value(qkv), spec, width);
        let per = spec.seq * dh;
        let results: Vec<(Vec<F>, HeadStats<F>)> = (0..spec.batch * spec.heads)
            .into_par_iter()
            .map(|bh| {
                let s = bh * per..(bh + 1) * per;
                attention::head_forward(&q[s.clone()], &k[s.clone()], &v[s], spec.seq, dh, spec.tiling, spec.causal)
            })
            .collect();
        let mut out = vec![F::zero(); rows * width];
        let mut stats = Vec::with_capacity(results.len());
        for (bh, (o, st)) in results.into_iter().enumerate() {
            let (b, h) = (bh / spec.heads, bh % spec.heads);
            for t in 0..spec.seq {
                let dst = (b * spec.seq + t) * width + h * dh;
                out[dst..dst + dh].copy_from_slice(&o[t * dh..(t + 1) * dh]);
            }
            stats.push(st);
        }
        let rg = self.rg(qkv);
        Ok(self.push(vec![rows, width], Cow::Owned(out), Op::Attention { qkv, spec, stats }, rg))
    }

    /// Multiplies by a fixed mask; callers pass 0 or `1 / (1 - p)` entries.
    pub fn dropout(&mut self, x: Var, mask: Vec<F>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(mismatch("dropout", self.shape(x), &[mask.len()]));
        }
        let out: Vec<F> = self.value(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let rg = self.rg(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, Cow::Owned(out), Op::Dropout { x, mask }, rg))
    }

    /// Reverse-mode pass from a scalar. Leaves unreachable from `loss` get
    /// zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::NotScalarLoss(ln.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if matches!(n.op, Op::Leaf) { g } else { None })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'a, F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let acc = |v: Var, delta: Vec<F>, grads: &mut [Option<Vec<F>>]| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&delta).for_each(|(b, &d)| *b += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = node.shape[1];
                if self.rg(*a) {
                    let da = if *trans_b {
                        kernels::matmul(g, self.value(*b), m, n, k)
                    } else {
                        kernels::matmul_nt(g, self.value(*b), m, n, k)
                    };
                    acc(*a, da, grads);
                }
                if self.rg(*b) {
                    let db = if *trans_b {
                        kernels::matmul_tn(g, self.value(*a), m, n, k)
                    } else {
                        kernels::matmul_tn(self.value(*a), g, m, k, n)
                    };
                    acc(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec(), grads);
                acc(*b, g.to_vec(), grads);
            }
            Op::AddBias { x, bias } => {
                acc(*x, g.to_vec(), grads);
                if self.rg(*bias) {
                    let n = self.shape(*bias)[0];
                    let mut db = vec![F::zero(); n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                    acc(*bias, db, grads);
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = g.iter().zip(self.value(*b)).map(|(&x, &y)| x * y).collect();
                    acc(*a, d, grads);
                }
                if self.rg(*b) {
                    let d = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                    acc(*b, d, grads);
                }
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|&x| x * *s).collect(), grads),
            Op::Sum(a) => acc(*a, vec![g[0]; self.value(*a).len()], grads),
            Op::Reshape(a) => acc(*a, g.to_vec(), grads),
            Op::Gelu(a) => {
                let d = g
                    .iter()
                    .zip(self.value(*a))
                    .map(|(&gy, &x)| gy * gelu_grad(x))
                    .collect();
                acc(*a, d, grads);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let n = self.shape(*gamma)[0];
                let xs = self.value(*x);
                let gm = self.value(*gamma);
                let inv_n = F::c(1.0 / n as f64);
                let mut dx = vec![F::zero(); xs.len()];
                let mut dg = vec![F::zero(); n];
                let mut db = vec![F::zero(); n];
                let mut xhat = vec![F::zero(); n];
                let mut dxhat = vec![F::zero(); n];
                for r in 0..mean.len() {
                    let row = &xs[r * n..(r + 1) * n];
                    let gy = &g[r * n..(r + 1) * n];
                    let mut s1 = F::zero();
                    let mut s2 = F::zero();
                    for j in 0..n {
                        xhat[j] = (row[j] - mean[r]) * rstd[r];
                        dxhat[j] = gy[j] * gm[j];
                        dg[j] += gy[j] * xhat[j];
                        db[j] += gy[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[j];
                    }
                    let (m1, m2) = (s1 * inv_n, s2 * inv_n);
                    for j in 0..n {
                        dx[r * n + j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                acc(*x, dx, grads);
                acc(*gamma, dg, grads);
                acc(*beta, db, grads);
            }
            Op::Embedding { table, ids } => {
                let d = self.shape(*table)[1];
                let mut dt = vec![F::zero(); self.value(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    dt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&g[r * d..(r + 1) * d])
                        .for_each(|(t, &v)| *t += v);
                }
                acc(*table, dt, grads);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let v = *self.shape(*logits).last().unwrap();
                let scale = g[0] / F::c(targets.len() as f64);
                let mut d: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * v + t] -= scale;
                }
                acc(*logits, d, grads);
            }
            Op::Attention { qkv, spec, stats } => {
                let width = node.shape[1];
                let dh = width / spec.heads;
                let (q, k, v) = split_heads(self.value(*qkv), *spec, width);
                let (o, dout) = split_pair(&node.value, g, *spec, width);
                let per = spec.seq * dh;
                let parts: Vec<(Vec<F>, Vec<F>, Vec<F>)> = (0..spec.batch * spec.heads)
                    .into_par_iter()
                    .map(|bh| {
                        let s = bh * per..(bh + 1) * per;
                        let args = attention::HeadGrads {
                            q: &q[s.clone()],
                            k: &k[s.clone()],
                            v: &v[s.clone()],
                            out: &o[s.clone()],
                            dout: &dout[s],
                            stats: &stats[bh],
                            seq: spec.seq,
                            dh,
                            tiling: spec.tiling,
                            causal: spec.causal,
                        };
                        match spec.backward {
                            AttnBackward::Recompute => attention::head_backward(args),
                            AttnBackward::Naive => attention::head_backward_naive(args),
                        }
                    })
                    .collect();
                let mut dqkv = vec![F::zero(); self.value(*qkv).len()];
                for (bh, (dq, dk, dv)) in parts.into_iter().enumerate() {
                    let (b, h) = (bh / spec.heads, bh % spec.heads);
                    for t in 0..spec.seq {
                        let row = (b * spec.seq + t) * 3 * width;
                        let src = t * dh..(t + 1) * dh;
                        dqkv[row + h * dh..row + (h + 1) * dh].copy_from_slice(&dq[src.clone()]);
                        dqkv[row + width + h * dh..row + width + (h + 1) * dh]
                            .copy_from_slice(&dk[src.clone()]);
                        dqkv[row + 2 * width + h * dh..row + 2 * width + (h + 1) * dh]
                            .copy_from_slice(&dv[src]);
                    }
                }
                acc(*qkv, dqkv, grads);
            }
            Op::Dropout { x, mask } => {
                acc(*x, g.iter().zip(mask).map(|(&a, &m)| a * m).collect(), grads);
            }
        }
    }
}

/// Rearranges `[B*T, 3d]` into three `[B*H, T, dh]` buffers.
fn split_heads<F: Scalar>(qkv: &[F], spec: AttentionSpec, width: usize) -> (Vec<F>, Vec<F>, Vec<F>) {
    let dh = width / spec.heads;
    let n = spec.batch * spec.seq * width;
    let (mut q, mut k, mut v) = (vec![F::zero(); n], vec![F::zero(); n], vec![F::zero(); n]);
    for b in 0..spec.batch {
        for t in 0..spec.seq {
            let row = &qkv[(b * spec.seq + t) * 3 * width..(b * spec.seq + t + 1) * 3 * width];
            for h in 0..spec.heads {
                let dst = ((b * spec.heads + h) * spec.seq + t) * dh;
                q[dst..dst + dh].copy_from_slice(&row[h * dh..(h + 1) * dh]);
                k[dst..dst + dh].copy_from_slice(&row[width + h * dh..width + (h + 1) * dh]);
                v[dst..dst + dh].copy_from_slice(&row[2 * width + h * dh..2 * width + (h + 1) * dh]);
            }
        }
    }
    (q, k, v)
}

/// Rearranges two `[B*T, d]` buffers into `[B*H, T, dh]` layout.
fn split_pair<F: Scalar>(
    a: &[F],
    b: &[F],
    spec: AttentionSpec,
    width: usize,
) -> (Vec<F>, Vec<F>) {
    let dh = width / spec.heads;
    let n = spec.batch * spec.seq * width;
    let (mut x, mut y) = (vec![F::zero(); n], vec![F::zero(); n]);
    for bt in 0..spec.batch * spec.seq {
        let (bb, t) = (bt / spec.seq, bt % spec.seq);
        for h in 0..spec.heads {
            let dst = ((bb * spec.heads + h) * spec.seq + t) * dh;
            let src = bt * width + h * dh;
            x[dst..dst + dh].copy_from_slice(&a[src..src + dh]);
            y[dst..dst + dh].copy_from_slice(&b[src..src + dh]);
        }
    }
    (x, y)
}

/// Gradients of every leaf reachable from the loss.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when `v` did not influence the loss.
    pub fn wrt(&self, v: Var, len: usize) -> Vec<F> {
        self.get(v).map(<[F]>::to_vec).unwrap_or_else(|| vec![F::zero(); len])
    }
}
