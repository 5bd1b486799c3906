//! Inner loops shared by forward and backward passes.
//!
//! Matrix products split work by output row only, so every output element is
//! reduced in the same order whatever the thread count.

use rayon::prelude::*;

use super::Scalar;

const PAR_THRESHOLD: usize = 1 << 16;

/// `[m, k] x [k, n] -> [m, n]`
pub fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    let row = |(i, o): (usize, &mut [F])| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (x, &bv) in o.iter_mut().zip(br) {
                *x += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `[m, k] x [n, k]^T -> [m, n]`
pub fn matmul_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    let row = |(i, o): (usize, &mut [F])| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, x) in o.iter_mut().enumerate() {
            *x = dot(ar, &b[j * k..(j + 1) * k]);
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

/// `[m, k]^T x [m, n] -> [k, n]`
pub fn matmul_tn<F: Scalar>(a: &[F], c: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    let row = |(p, o): (usize, &mut [F])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            for (x, &cv) in o.iter_mut().zip(&c[i * n..(i + 1) * n]) {
                *x += av * cv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
    out
}

#[inline]
pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

const GELU_COEFF: f64 = 0.044715;

fn gelu_k<F: Scalar>() -> F {
    F::c((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh approximation `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
pub fn gelu<F: Scalar>(x: F) -> F {
    let u = gelu_k::<F>() * (x + F::c(GELU_COEFF) * x * x * x);
    F::c(0.5) * x * (F::one() + u.tanh())
}

pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let k = gelu_k::<F>();
    let u = k * (x + F::c(GELU_COEFF) * x * x * x);
    let t = u.tanh();
    let du = k * (F::one() + F::c(3.0 * GELU_COEFF) * x * x);
    F::c(0.5) * (F::one() + t) + F::c(0.5) * x * (F::one() - t * t) * du
}
