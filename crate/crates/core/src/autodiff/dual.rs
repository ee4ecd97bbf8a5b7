use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Scalar;

/// First-order dual number: a value and its derivative along one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<S> {
    pub re: S,
    pub eps: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, eps: S) -> Self {
        Self { re, eps }
    }

    /// Seeded input: tangent 1.
    pub fn variable(re: S) -> Self {
        Self { re, eps: S::constant(1.0) }
    }

    /// Tangent 0.
    pub fn lift(re: S) -> Self {
        Self { re, eps: S::constant(0.0) }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self { re: self.re * o.re, eps: self.re * o.eps + o.re * self.eps }
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Self { re: q, eps: (self.eps - q * o.eps) / o.re }
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { re: -self.re, eps: -self.eps }
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn constant(c: f64) -> Self {
        Self::lift(S::constant(c))
    }

    fn value(&self) -> f64 {
        self.re.value()
    }

    fn tanh(self) -> Self {
        let y = self.re.tanh();
        Self { re: y, eps: (S::constant(1.0) - y * y) * self.eps }
    }

    fn sigmoid(self) -> Self {
        let s = self.re.sigmoid();
        Self { re: s, eps: s * (S::constant(1.0) - s) * self.eps }
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        Self { re: e, eps: e * self.eps }
    }

    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Self { re: s, eps: self.eps / (s + s) }
    }

    fn softplus(self) -> Self {
        Self { re: self.re.softplus(), eps: self.re.sigmoid() * self.eps }
    }
}
