//! Dense row-major arrays and a tape-based reverse-mode gradient engine.
//!
//! Everything is generic over [`Scalar`] so the same graph code runs in
//! 32-bit for training, in 64-bit for gradient checking, and in double-double
//! for finite-difference references.

mod dd;
mod gradcheck;
mod graph;
pub mod kernels;

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

pub use dd::Dd;
pub use gradcheck::{
    grad_check, grad_check_dual, grad_check_in, primitive_suite, relative_error, CheckFn, GradCheckReport, Precision,
    Primitive, PrimitiveCheck, FD_STEP, FD_STEP_REF,
};
pub use graph::{AttentionSpec, AttnBackward, Gradients, Graph, Var, LAYER_NORM_EPS};

use crate::error::{Error, Result};

/// The arithmetic the engine needs from an element type.
pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Converts an f64 constant, rounding if needed.
    fn c(x: f64) -> Self;
    fn f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::c(0.0)
    }

    fn one() -> Self {
        Self::c(1.0)
    }

    fn neg_infinity() -> Self {
        Self::c(f64::NEG_INFINITY)
    }

    fn abs(self) -> Self {
        if self < Self::zero() {
            -self
        } else {
            self
        }
    }

    /// Larger of the two; `other` wins ties and unordered pairs.
    fn max(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
}

macro_rules! native_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn c(x: f64) -> Self {
                x as $t
            }
            fn f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            fn max(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
        }
    };
}

native_scalar!(f32);
native_scalar!(f64);

/// Left-to-right sum.
pub fn total<F: Scalar>(values: impl IntoIterator<Item = F>) -> F {
    values.into_iter().fold(F::zero(), |a, b| a + b)
}


/// A dense array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    grad: Option<Vec<F>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![F::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [F]> {
        self.grad.as_deref_mut()
    }

    /// Adds `g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[F]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(b, &x)| *b += x),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = F::zero());
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Converts values (not gradients) to another precision.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| G::c(x.f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert_eq!(Tensor::<f32>::zeros(vec![]).numel(), 1);
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::<f64>::zeros(vec![2]).with_grad();
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad().unwrap(), &[1.5, 2.5]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }
}
