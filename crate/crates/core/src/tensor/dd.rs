//! Double-double floats: an unevaluated sum `hi + lo` carrying about 106
//! significand bits. Only as much as the gradient engine needs.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use super::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Veltkamp split into two 26-bit halves.
fn split(a: f64) -> (f64, f64) {
    const SPLITTER: f64 = 134217729.0;
    let t = SPLITTER * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

/// Dekker's exact product, avoiding a software fused multiply-add.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    pub const fn new(hi: f64, lo: f64) -> Self {
        Self { hi, lo }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn norm(s: f64, e: f64) -> Self {
        if !s.is_finite() {
            return Self { hi: s, lo: 0.0 };
        }
        let (hi, lo) = quick_two_sum(s, e);
        Self { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        if !p.is_finite() {
            return Self { hi: p, lo: 0.0 };
        }
        Self::norm(p, e + self.lo * b)
    }

    /// Multiplies by `2^k` exactly, splitting the factor to stay in range.
    fn ldexp(self, k: i32) -> Self {
        let a = 2f64.powi(k / 2);
        let b = 2f64.powi(k - k / 2);
        Self {
            hi: self.hi * a * b,
            lo: self.lo * a * b,
        }
    }

    fn sinh_taylor(self) -> Self {
        let x2 = self * self;
        let mut term = self;
        let mut sum = self;
        let mut n = 1.0;
        while term.hi.abs() > 1e-36 * sum.hi.abs().max(1e-300) {
            term = term * x2 / Dd::c((n + 1.0) * (n + 2.0));
            sum += term;
            n += 2.0;
        }
        sum
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        if !s.is_finite() {
            return Dd { hi: s, lo: 0.0 };
        }
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::norm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + -b
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return Dd { hi: p, lo: 0.0 };
        }
        Dd::norm(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || b.hi == 0.0 {
            return Dd { hi: q1, lo: 0.0 };
        }
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (q1, q2) = quick_two_sum(q1, q2);
        Dd { hi: q1, lo: q2 } + Dd::c(q3)
    }
}

macro_rules! assign_op {
    ($tr:ident, $f:ident, $op:tt) => {
        impl $tr for Dd {
            fn $f(&mut self, b: Dd) {
                *self = *self $op b;
            }
        }
    };
}

assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl Scalar for Dd {
    fn c(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    fn f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        if self.hi > 709.7 {
            return Dd::c(f64::INFINITY);
        }
        if self.hi < -745.2 {
            return Dd::zero();
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2.mul_f64(k)).ldexp(-10);
        let mut term = r;
        let mut sum = Dd::one() + r;
        let mut n = 2.0;
        while term.hi.abs() > 1e-36 {
            term = term * r / Dd::c(n);
            sum += term;
            n += 1.0;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.ldexp(k as i32)
    }

    fn ln(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Dd::c(self.hi.ln());
        }
        let mut y = Dd::c(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::one();
        }
        y
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 || !self.hi.is_finite() {
            return Dd::c(self.hi.sqrt());
        }
        let y = Dd::c(self.hi.sqrt());
        y + (self - y * y) / (y + y)
    }

    fn tanh(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        let a = self.abs();
        let t = if a.hi < 0.5 {
            let s = a.sinh_taylor();
            s / (Dd::one() + s * s).sqrt()
        } else if a.hi > 40.0 {
            Dd::one()
        } else {
            let e = (a * Dd::c(-2.0)).exp();
            (Dd::one() - e) / (Dd::one() + e)
        };
        if self.hi < 0.0 {
            -t
        } else {
            t
        }
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, hi: f64, lo: f64) -> bool {
        let want = Dd::new(hi, lo);
        let err = (a - want).abs();
        err.f64() <= 1e-28 * hi.abs()
    }

    #[test]
    fn arithmetic_keeps_low_bits() {
        let third = Dd::one() / Dd::c(3.0);
        let back = third * Dd::c(3.0);
        assert!((back - Dd::one()).abs().f64() < 1e-31);
        let tiny = Dd::c(1.0) + Dd::c(1e-20);
        assert_eq!((tiny - Dd::one()).f64(), 1e-20);
    }

    #[test]
    fn transcendental_values() {
        assert!(close(Dd::one().exp(), std::f64::consts::E, 1.4456468917292502e-16));
        assert!(close(Dd::c(2.0).ln(), std::f64::consts::LN_2, 2.3190468138462996e-17));
        assert!(close(Dd::c(10.0).ln(), std::f64::consts::LN_10, -2.1707562233822494e-16));
        assert!(close(Dd::c(2.0).sqrt(), std::f64::consts::SQRT_2, -9.667293313452913e-17));
        assert!(close(Dd::c(-20.0).exp(), 2.061153622438558e-09, -4.19755767595054e-26));
        assert!(close(Dd::c(0.25).tanh(), 0.24491866240370913, -1.6036228849882693e-18));
        assert!(close(Dd::c(-1.75).tanh(), -0.9413755384972874, 2.736933596553663e-17));
    }

    #[test]
    fn infinities_do_not_poison() {
        let m = Dd::neg_infinity();
        assert_eq!((m - Dd::c(3.0)).exp(), Dd::zero());
        assert_eq!(m.max(Dd::c(-1.0)), Dd::c(-1.0));
        assert!(!Dd::c(f64::INFINITY).is_finite());
    }
}
