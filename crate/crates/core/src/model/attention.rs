//! Scaled dot-product attention for one head at a time, `[T, d_head]` row-major.
//!
//! The tiled kernel streams over key blocks with a running row maximum and
//! normalizer, so the only scratch is one `block_rows x block_cols` score
//! tile plus per-row accumulators.

use super::AttnTiling;
use crate::error::{Error, Result};
use crate::tensor::{total, Scalar};

/// Per-row softmax statistics saved by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadStats<F> {
    pub row_max: Vec<F>,
    pub row_sum: Vec<F>,
}

/// Inputs for a single-head backward pass.
pub(crate) struct HeadGrads<'s, F> {
    pub q: &'s [F],
    pub k: &'s [F],
    pub v: &'s [F],
    pub out: &'s [F],
    pub dout: &'s [F],
    pub stats: &'s HeadStats<F>,
    pub seq: usize,
    pub dh: usize,
    pub tiling: AttnTiling,
    pub causal: bool,
}

fn scale<F: Scalar>(dh: usize) -> F {
    F::c(1.0 / (dh as f64).sqrt())
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    total(a.iter().zip(b).map(|(&x, &y)| x * y))
}

/// Tiled forward for one head.
pub(crate) fn head_forward<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    seq: usize,
    dh: usize,
    tiling: AttnTiling,
    causal: bool,
) -> (Vec<F>, HeadStats<F>) {
    let sc = scale::<F>(dh);
    let (br, bc) = (tiling.block_rows.max(1), tiling.block_cols.max(1));
    let mut out = vec![F::zero(); seq * dh];
    let mut row_max = vec![F::neg_infinity(); seq];
    let mut row_sum = vec![F::zero(); seq];
    let mut tile = vec![F::zero(); br * bc];
    for r0 in (0..seq).step_by(br) {
        let r1 = (r0 + br).min(seq);
        for c0 in (0..seq).step_by(bc) {
            if causal && c0 > r1 - 1 {
                break;
            }
            let c1 = (c0 + bc).min(seq);
            for i in r0..r1 {
                let qi = &q[i * dh..(i + 1) * dh];
                let s = &mut tile[(i - r0) * bc..(i - r0) * bc + (c1 - c0)];
                let mut mx = F::neg_infinity();
                for (jj, sj) in s.iter_mut().enumerate() {
                    let j = c0 + jj;
                    *sj = if causal && j > i {
                        F::neg_infinity()
                    } else {
                        dot(qi, &k[j * dh..(j + 1) * dh]) * sc
                    };
                    mx = mx.max(*sj);
                }
                if mx == F::neg_infinity() {
                    continue;
                }
                let m_new = row_max[i].max(mx);
                let correction = (row_max[i] - m_new).exp();
                let acc = &mut out[i * dh..(i + 1) * dh];
                acc.iter_mut().for_each(|a| *a *= correction);
                let mut l = row_sum[i] * correction;
                for (jj, &sj) in s.iter().enumerate() {
                    if sj == F::neg_infinity() {
                        continue;
                    }
                    let p = (sj - m_new).exp();
                    l += p;
                    let vj = &v[(c0 + jj) * dh..(c0 + jj + 1) * dh];
                    acc.iter_mut().zip(vj).for_each(|(a, &x)| *a += p * x);
                }
                row_max[i] = m_new;
                row_sum[i] = l;
            }
        }
        for i in r0..r1 {
            let inv = F::one() / row_sum[i];
            out[i * dh..(i + 1) * dh].iter_mut().for_each(|a| *a *= inv);
        }
    }
    (out, HeadStats { row_max, row_sum })
}

/// Backward that recomputes each score tile from the saved statistics.
pub(crate) fn head_backward<F: Scalar>(a: HeadGrads<'_, F>) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (seq, dh) = (a.seq, a.dh);
    let sc = scale::<F>(dh);
    let (br, bc) = (a.tiling.block_rows.max(1), a.tiling.block_cols.max(1));
    let mut dq = vec![F::zero(); seq * dh];
    let mut dk = vec![F::zero(); seq * dh];
    let mut dv = vec![F::zero(); seq * dh];
    let delta: Vec<F> = (0..seq)
        .map(|i| dot(&a.dout[i * dh..(i + 1) * dh], &a.out[i * dh..(i + 1) * dh]))
        .collect();
    for c0 in (0..seq).step_by(bc) {
        let c1 = (c0 + bc).min(seq);
        for r0 in (0..seq).step_by(br) {
            let r1 = (r0 + br).min(seq);
            if a.causal && c0 > r1 - 1 {
                continue;
            }
            for i in r0..r1 {
                let qi = &a.q[i * dh..(i + 1) * dh];
                let doi = &a.dout[i * dh..(i + 1) * dh];
                let inv = F::one() / a.stats.row_sum[i];
                let jmax = if a.causal { c1.min(i + 1) } else { c1 };
                for j in c0..jmax {
                    let kj = &a.k[j * dh..(j + 1) * dh];
                    let vj = &a.v[j * dh..(j + 1) * dh];
                    let p = (dot(qi, kj) * sc - a.stats.row_max[i]).exp() * inv;
                    dv[j * dh..(j + 1) * dh]
                        .iter_mut()
                        .zip(doi)
                        .for_each(|(d, &g)| *d += p * g);
                    let ds = p * (dot(doi, vj) - delta[i]) * sc;
                    dq[i * dh..(i + 1) * dh]
                        .iter_mut()
                        .zip(kj)
                        .for_each(|(d, &x)| *d += ds * x);
                    dk[j * dh..(j + 1) * dh]
                        .iter_mut()
                        .zip(qi)
                        .for_each(|(d, &x)| *d += ds * x);
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Dense weights `[T, T]` for one head, computed directly.
fn dense_weights<F: Scalar>(q: &[F], k: &[F], seq: usize, dh: usize, causal: bool) -> Vec<F> {
    let sc = scale::<F>(dh);
    let mut w = vec![F::zero(); seq * seq];
    for i in 0..seq {
        let row = &mut w[i * seq..(i + 1) * seq];
        let jmax = if causal { i + 1 } else { seq };
        let mut mx = F::neg_infinity();
        for j in 0..jmax {
            row[j] = dot(&q[i * dh..(i + 1) * dh], &k[j * dh..(j + 1) * dh]) * sc;
            mx = mx.max(row[j]);
        }
        let mut z = F::zero();
        for x in &mut row[..jmax] {
            *x = (*x - mx).exp();
            z += *x;
        }
        row[..jmax].iter_mut().for_each(|x| *x /= z);
    }
    w
}

fn head_forward_naive<F: Scalar>(q: &[F], k: &[F], v: &[F], seq: usize, dh: usize, causal: bool) -> Vec<F> {
    let w = dense_weights(q, k, seq, dh, causal);
    let mut out = vec![F::zero(); seq * dh];
    for i in 0..seq {
        for j in 0..seq {
            let p = w[i * seq + j];
            out[i * dh..(i + 1) * dh]
                .iter_mut()
                .zip(&v[j * dh..(j + 1) * dh])
                .for_each(|(o, &x)| *o += p * x);
        }
    }
    out
}

/// Dense reference backward.
pub(crate) fn head_backward_naive<F: Scalar>(a: HeadGrads<'_, F>) -> (Vec<F>, Vec<F>, Vec<F>) {
    let (seq, dh) = (a.seq, a.dh);
    let sc = scale::<F>(dh);
    let w = dense_weights(a.q, a.k, seq, dh, a.causal);
    let mut dq = vec![F::zero(); seq * dh];
    let mut dk = vec![F::zero(); seq * dh];
    let mut dv = vec![F::zero(); seq * dh];
    let mut dp = vec![F::zero(); seq];
    for i in 0..seq {
        let doi = &a.dout[i * dh..(i + 1) * dh];
        for (j, d) in dp.iter_mut().enumerate() {
            *d = dot(doi, &a.v[j * dh..(j + 1) * dh]);
        }
        let row = &w[i * seq..(i + 1) * seq];
        let d = total(row.iter().zip(&dp).map(|(&p, &g)| p * g));
        for j in 0..seq {
            let p = row[j];
            dv[j * dh..(j + 1) * dh]
                .iter_mut()
                .zip(doi)
                .for_each(|(x, &g)| *x += p * g);
            let ds = p * (dp[j] - d) * sc;
            for c in 0..dh {
                dq[i * dh + c] += ds * a.k[j * dh + c];
                dk[j * dh + c] += ds * a.q[i * dh + c];
            }
        }
    }
    (dq, dk, dv)
}

fn check_heads<F>(q: &[F], k: &[F], v: &[F], heads: usize, seq: usize) -> Result<usize> {
    let n = heads * seq;
    if n == 0 || q.len() != k.len() || q.len() != v.len() || !q.len().is_multiple_of(n) {
        return Err(Error::ShapeMismatch {
            op: "attention",
            left: vec![q.len(), k.len(), v.len()],
            right: vec![heads, seq],
        });
    }
    Ok(q.len() / n)
}

fn per_head<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    heads: usize,
    seq: usize,
    f: impl Fn(&[F], &[F], &[F], usize) -> Vec<F>,
) -> Result<Vec<F>> {
    let dh = check_heads(q, k, v, heads, seq)?;
    let per = seq * dh;
    let mut out = Vec::with_capacity(q.len());
    for h in 0..heads {
        let s = h * per..(h + 1) * per;
        out.extend(f(&q[s.clone()], &k[s.clone()], &v[s], dh));
    }
    Ok(out)
}

/// Tiled online-softmax attention over `[heads, T, d_head]` inputs.
pub fn attention_tiled<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    heads: usize,
    seq: usize,
    tiling: AttnTiling,
    causal: bool,
) -> Result<Vec<F>> {
    tiling.validate()?;
    per_head(q, k, v, heads, seq, |q, k, v, dh| {
        head_forward(q, k, v, seq, dh, tiling, causal).0
    })
}

/// Dense reference: materializes the full score matrix per head.
pub fn attention_naive<F: Scalar>(
    q: &[F],
    k: &[F],
    v: &[F],
    heads: usize,
    seq: usize,
    causal: bool,
) -> Result<Vec<F>> {
    per_head(q, k, v, heads, seq, |q, k, v, dh| {
        head_forward_naive(q, k, v, seq, dh, causal)
    })
}

/// Debug path: rebuilds the `[heads, T, T]` weight matrix from the row
/// statistics the tiled kernel keeps.
pub fn attention_weights<F: Scalar>(
    q: &[F],
    k: &[F],
    heads: usize,
    seq: usize,
    tiling: AttnTiling,
    causal: bool,
) -> Result<Vec<F>> {
    tiling.validate()?;
    let dh = check_heads(q, k, k, heads, seq)?;
    let sc = scale::<F>(dh);
    let per = seq * dh;
    let mut w = vec![F::zero(); heads * seq * seq];
    for h in 0..heads {
        let (qh, kh) = (&q[h * per..(h + 1) * per], &k[h * per..(h + 1) * per]);
        let (_, st) = head_forward(qh, kh, kh, seq, dh, tiling, causal);
        for i in 0..seq {
            let jmax = if causal { i + 1 } else { seq };
            for j in 0..jmax {
                let s = dot(&qh[i * dh..(i + 1) * dh], &kh[j * dh..(j + 1) * dh]) * sc;
                w[(h * seq + i) * seq + j] = (s - st.row_max[i]).exp() / st.row_sum[i];
            }
        }
    }
    Ok(w)
}
