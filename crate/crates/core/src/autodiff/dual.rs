//! Second-order forward-mode numbers.
//!
//! A [`Dual2`] carries a value together with the first and second derivative
//! along one seeded input direction. Arithmetic and elementary functions
//! apply the exact second-order chain rule
//! `f(x) -> (f(v), f'(v)·d1, f''(v)·d1² + f'(v)·d2)`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Dual2<S> {
    pub v: S,
    pub d1: S,
    pub d2: S,
}

impl<S: Scalar> Dual2<S> {
    /// A constant: both derivative slots are zero.
    pub fn constant(v: S) -> Self {
        Dual2 {
            v,
            d1: v.lift(0.0),
            d2: v.lift(0.0),
        }
    }

    /// The seeded input variable: d1 = 1, d2 = 0.
    pub fn seeded(v: S) -> Self {
        Dual2 {
            v,
            d1: v.lift(1.0),
            d2: v.lift(0.0),
        }
    }

    pub fn values(&self) -> (f64, f64, f64) {
        (self.v.value(), self.d1.value(), self.d2.value())
    }

    /// Applies a unary function given its value and first two derivatives at
    /// `self.v`.
    fn chain(self, f: S, fp: S, fpp: S) -> Self {
        Dual2 {
            v: f,
            d1: fp * self.d1,
            d2: fpp * self.d1 * self.d1 + fp * self.d2,
        }
    }

    pub fn tanh(self) -> Self {
        let f = self.v.tanh();
        let one = self.v.lift(1.0);
        let s = one - f * f;
        let fpp = -(f + f) * s;
        self.chain(f, s, fpp)
    }

    pub fn exp(self) -> Self {
        let f = self.v.exp();
        self.chain(f, f, f)
    }

    pub fn sin(self) -> Self {
        let s = self.v.sin();
        let c = self.v.cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let s = self.v.sin();
        let c = self.v.cos();
        self.chain(c, -s, -c)
    }

    pub fn sech(self) -> Self {
        let f = self.v.sech();
        let t = self.v.tanh();
        let fp = -f * t;
        let fpp = f * (t * t - f * f);
        self.chain(f, fp, fpp)
    }

    pub fn square(self) -> Self {
        let two = self.v.lift(2.0);
        self.chain(self.v * self.v, two * self.v, two)
    }

    pub fn recip(self) -> Self {
        let one = self.v.lift(1.0);
        let inv = one / self.v;
        let inv2 = inv * inv;
        let two = self.v.lift(2.0);
        self.chain(inv, -inv2, two * inv2 * inv)
    }

    pub fn scale(self, c: f64) -> Self {
        let c = self.v.lift(c);
        Dual2 {
            v: self.v * c,
            d1: self.d1 * c,
            d2: self.d2 * c,
        }
    }
}

// Dual numbers are themselves scalars, so generic model code can run over
// them (and over Dual2<Var> for reverse-over-forward sweeps).
impl<S: Scalar> Scalar for Dual2<S> {
    fn value(self) -> f64 {
        self.v.value()
    }

    fn lift(self, c: f64) -> Self {
        Dual2::constant(self.v.lift(c))
    }

    fn tanh(self) -> Self {
        Dual2::tanh(self)
    }

    fn exp(self) -> Self {
        Dual2::exp(self)
    }

    fn sin(self) -> Self {
        Dual2::sin(self)
    }

    fn cos(self) -> Self {
        Dual2::cos(self)
    }

    fn sech(self) -> Self {
        Dual2::sech(self)
    }
}

impl<S: Scalar> Add for Dual2<S> {
    type Output = Self;
    fn add(self, r: Self) -> Self {
        Dual2 {
            v: self.v + r.v,
            d1: self.d1 + r.d1,
            d2: self.d2 + r.d2,
        }
    }
}

impl<S: Scalar> Sub for Dual2<S> {
    type Output = Self;
    fn sub(self, r: Self) -> Self {
        Dual2 {
            v: self.v - r.v,
            d1: self.d1 - r.d1,
            d2: self.d2 - r.d2,
        }
    }
}

impl<S: Scalar> Mul for Dual2<S> {
    type Output = Self;
    fn mul(self, r: Self) -> Self {
        Dual2 {
            v: self.v * r.v,
            d1: self.d1 * r.v + self.v * r.d1,
            d2: self.d2 * r.v + (self.d1 * r.d1 + self.d1 * r.d1) + self.v * r.d2,
        }
    }
}

impl<S: Scalar> Div for Dual2<S> {
    type Output = Self;
    fn div(self, r: Self) -> Self {
        self * r.recip()
    }
}

impl<S: Scalar> Neg for Dual2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual2 {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
        }
    }
}

/// Elementary function tags accepted by [`dual2_chain`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElemFn {
    Tanh,
    Exp,
    Sin,
    Cos,
    Sech,
    Square,
    Recip,
}

/// Applies an elementary function to a second-order dual number, rejecting
/// domain violations.
pub fn dual2_chain(f_name: ElemFn, x: Dual2<f64>) -> Result<Dual2<f64>> {
    if !x.v.is_finite() {
        return Err(Error::NonFinite {
            context: format!("dual2_chain({:?}) input", f_name),
        });
    }
    let y = match f_name {
        ElemFn::Tanh => x.tanh(),
        ElemFn::Exp => x.exp(),
        ElemFn::Sin => x.sin(),
        ElemFn::Cos => x.cos(),
        ElemFn::Sech => x.sech(),
        ElemFn::Square => x.square(),
        ElemFn::Recip => {
            if x.v == 0.0 {
                return Err(Error::Domain("reciprocal of zero".into()));
            }
            x.recip()
        }
    };
    if y.v.is_finite() && y.d1.is_finite() && y.d2.is_finite() {
        Ok(y)
    } else {
        Err(Error::NonFinite {
            context: format!("dual2_chain({:?}) output", f_name),
        })
    }
}
