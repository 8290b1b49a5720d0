//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s,
//! good for about 106 significand bits.
//!
//! Only the finite-difference side of gradient checks uses this type. Its
//! round-off is roughly `1e-32` relative, so central differences stay
//! accurate for gradients many orders of magnitude below what `f64`
//! differences can resolve.

use core::cmp::Ordering;
use core::ops::{Add, Div, Mul, Neg, Sub};

use num_traits::Float;

use super::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DoubleF64 {
    hi: f64,
    lo: f64,
}

const LN_2: DoubleF64 = DoubleF64 {
    hi: 6.931_471_805_599_453e-1,
    lo: 2.319_046_813_846_299_6e-17,
};

/// Exact `a + b` as `(sum, error)`.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Exact `a + b` assuming `|a| >= |b|`.
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a; // 2^27 + 1
    let hi = t - (t - a);
    (hi, a - hi)
}

/// Exact `a * b` as `(product, error)` via Dekker's splitting.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

impl DoubleF64 {
    pub const fn new(hi: f64) -> Self {
        Self { hi, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    fn from_pair((hi, lo): (f64, f64)) -> Self {
        Self { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let mut out = self;
        let mut k = k;
        while k != 0 {
            let step = k.clamp(-1000, 1000);
            let f = pow2(step);
            out = Self { hi: out.hi * f, lo: out.lo * f };
            k -= step;
        }
        out
    }

    fn div_f64(self, b: f64) -> Self {
        self / Self::new(b)
    }

    /// `exp(r) - 1` for `|r| <= 0.35`: Taylor series on `r / 512`, then
    /// nine doublings through `e^(2t) - 1 = s (s + 2)`.
    fn expm1_reduced(r: Self) -> Self {
        let t = r.scale_pow2(-9);
        let mut term = t;
        let mut sum = t;
        for n in 2..=12 {
            term = (term * t).div_f64(n as f64);
            sum = sum + term;
        }
        let two = Self::new(2.0);
        for _ in 0..9 {
            sum = sum * (sum + two);
        }
        sum
    }

    pub fn exp_m1(self) -> Self {
        if self.hi.abs() < 0.3 {
            Self::expm1_reduced(self)
        } else {
            Scalar::exp(self) - Self::new(1.0)
        }
    }
}

impl From<f64> for DoubleF64 {
    fn from(v: f64) -> Self {
        Self::new(v)
    }
}

impl From<DoubleF64> for f64 {
    fn from(v: DoubleF64) -> Self {
        v.hi + v.lo
    }
}

impl PartialOrd for DoubleF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            ord => Some(ord),
        }
    }
}

impl Neg for DoubleF64 {
    type Output = Self;
    fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }
}

impl Add for DoubleF64 {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        if !s.is_finite() {
            return Self::new(s);
        }
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Self::from_pair(quick_two_sum(s, e + f))
    }
}

impl Sub for DoubleF64 {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleF64 {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        if !p.is_finite() {
            return Self::new(p);
        }
        Self::from_pair(quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi)))
    }
}

impl Div for DoubleF64 {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() {
            return Self::new(q1);
        }
        let r = self - b * Self::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Self::new(q2);
        let q3 = r.hi / b.hi;
        Self::from_pair(quick_two_sum(q1, q2)) + Self::new(q3)
    }
}

impl Scalar for DoubleF64 {
    fn from_f64(v: f64) -> Self {
        Self::new(v)
    }

    fn as_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn zero() -> Self {
        Self::new(0.0)
    }

    fn one() -> Self {
        Self::new(1.0)
    }

    fn neg_infinity() -> Self {
        Self::new(f64::NEG_INFINITY)
    }

    fn exp(self) -> Self {
        if self.hi.is_nan() {
            return self;
        }
        if self.hi > 709.0 {
            return Self::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::zero();
        }
        let k = Float::round(self.hi / LN_2.hi);
        let r = self - LN_2 * Self::new(k);
        let e = Self::expm1_reduced(r) + Self::one();
        e.scale_pow2(k as i32)
    }

    /// Two Newton steps on `exp(y) = x` from the `f64` logarithm.
    fn ln(self) -> Self {
        if self.hi.is_nan() || self.hi < 0.0 {
            return Self::new(f64::NAN);
        }
        if self.hi == 0.0 {
            return Self::neg_infinity();
        }
        if self.hi.is_infinite() {
            return self;
        }
        let mut y = Self::new(Float::ln(self.hi));
        for _ in 0..2 {
            y = y + self * Scalar::exp(-y) - Self::one();
        }
        y
    }

    fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return if self.hi == 0.0 { Self::zero() } else { Self::new(f64::NAN) };
        }
        let y = Float::sqrt(self.hi);
        let r = self - Self::from_pair(two_prod(y, y));
        Self::from_pair(quick_two_sum(y, r.hi / (2.0 * y)))
    }

    fn tanh(self) -> Self {
        if self.hi > 40.0 {
            return Self::one();
        }
        if self.hi < -40.0 {
            return -Self::one();
        }
        let t = (self + self).exp_m1();
        t / (t + Self::new(2.0))
    }

    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type D = DoubleF64;

    fn close(a: D, b: D, tol: f64) -> bool {
        let d = (a - b).abs();
        d.hi <= tol * f64::max(1.0, b.abs().hi)
    }

    #[test]
    fn arithmetic_keeps_the_low_word() {
        let third = D::one() / D::new(3.0);
        assert!(close(third * D::new(3.0), D::one(), 1e-31));
        let tiny = D::new(1.0) + D::new(1e-20);
        assert_eq!((tiny - D::one()).as_f64(), 1e-20);
    }

    #[test]
    fn transcendental_identities() {
        let e = D { hi: 2.718_281_828_459_045, lo: 1.445_646_891_729_250_2e-16 };
        assert!(close(D::one().exp(), e, 1e-30));
        for x in [-30.0, -2.5, -0.1, 1e-9, 0.3, 0.7, 4.0, 50.0] {
            let x = D::new(x);
            assert!(close(x.exp().ln(), x, 1e-29), "{x:?}");
            assert!(close(x.exp() * (-x).exp(), D::one(), 1e-30));
        }
        let two = D::new(2.0);
        let r = two.sqrt();
        assert!(close(r * r, two, 1e-31));
        assert!(close(D::new(0.5).tanh(), -D::new(-0.5).tanh(), 1e-32));
        let x = D::new(1e-10);
        assert!(close(x.tanh(), x, 1e-20));
    }

    #[test]
    fn central_differences_are_quiet() {
        // Round-off in f(x +- h) must sit far below f64 resolution.
        let h = D::new(1e-7);
        for i in 0..200 {
            let x = D::new(-3.0 + i as f64 * 0.031);
            let num = |f: fn(D) -> D| ((f(x + h) - f(x - h)) / (h + h)).as_f64();
            let exp_err = num(|v| v.exp()) - x.exp().as_f64();
            assert!(exp_err.abs() < 1e-13 * x.exp().as_f64(), "exp at {x:?}: {exp_err:e}");
            let t = x.tanh().as_f64();
            assert!((num(|v| v.tanh()) - (1.0 - t * t)).abs() < 1e-13);
            if x.hi.abs() > 0.1 {
                let exact = -1.0 / (x.as_f64() * x.as_f64());
                assert!((num(|v| D::one() / v) - exact).abs() < 1e-12 * exact.abs());
            }
        }
    }

    #[test]
    fn special_values() {
        assert_eq!(D::new(-800.0).exp(), D::zero());
        assert!(!D::new(800.0).exp().is_finite());
        assert_eq!(D::zero().ln(), D::neg_infinity());
        assert!(D::new(-1.0).ln().hi.is_nan());
        assert!(D::new(1.0) > D::new(1.0) - D::new(1e-25));
        assert_eq!(D::new(3.0).max(D::new(2.0)), D::new(3.0));
    }
}
