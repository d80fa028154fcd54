//! Scalar abstraction shared by plain `f64` evaluation and tape-recorded
//! reverse-mode evaluation.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// A differentiable scalar. Implemented by `f64` (plain evaluation) and by
/// [`crate::autodiff::tape::Var`] (reverse-mode recording).
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current numeric value.
    fn value(self) -> f64;
    /// A constant in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// Hyperbolic secant, written to avoid overflow for large |x|.
    fn sech(self) -> Self {
        let two = self.lift(2.0);
        let one = self.lift(1.0);
        if self.value() >= 0.0 {
            let em = (-self).exp();
            two * em / (one + em * em)
        } else {
            let ep = self.exp();
            two * ep / (one + ep * ep)
        }
    }
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}
