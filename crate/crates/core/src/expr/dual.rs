//! Forward-mode dual numbers, nestable for second derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic needed to evaluate an expression tape.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    /// NaN in every component, so domain errors survive differentiation.
    fn nan() -> Self {
        Self::constant(f64::NAN)
    }
    /// Innermost real part.
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn powi(self, k: i32) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn constant(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn powi(self, k: i32) -> Self {
        f64::powi(self, k)
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    #[inline]
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    #[inline]
    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::constant(1.0) }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        if o.re.value() == 0.0 {
            return Self::nan();
        }
        let q = self.re / o.re;
        Dual::new(q, (self.eps - q * o.eps) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    #[inline]
    fn constant(v: f64) -> Self {
        Dual::new(T::constant(v), T::constant(0.0))
    }
    #[inline]
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn nan() -> Self {
        Dual::new(T::nan(), T::nan())
    }
    #[inline]
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.eps * e)
    }
    #[inline]
    fn powi(self, k: i32) -> Self {
        match k {
            0 => Self::constant(1.0),
            _ => {
                let lower = self.re.powi(k - 1);
                Dual::new(lower * self.re, self.eps * T::constant(k as f64) * lower)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_dual_gives_second_derivative() {
        // d²/dx² (x^3) at x = 2 is 12
        let x = Dual::new(Dual::variable(2.0), Dual::new(1.0, 0.0));
        let y = x.powi(3);
        assert_eq!(y.re.re, 8.0);
        assert_eq!(y.eps.eps, 12.0);
        assert_eq!(y.re.eps, 12.0);
    }

    #[test]
    fn division_by_exact_zero_is_nan() {
        let r = Dual::variable(1.0) / Dual::constant(0.0);
        assert!(r.re.is_nan());
    }
}
