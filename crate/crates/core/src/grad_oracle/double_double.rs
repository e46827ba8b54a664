//! Double-double arithmetic: an unevaluated sum `hi + lo` of two `f64`s,
//! carrying roughly 106 bits of mantissa.
//!
//! Only the operations the reference loss needs are provided. Transcendentals
//! are accurate to a few units of 1e-30 relative over the ranges an LSTM
//! forward pass produces.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct DoubleDouble {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// `1/n!` for `n` in `0..=10`.
fn inverse_factorials() -> &'static [DoubleDouble; 11] {
    static TABLE: OnceLock<[DoubleDouble; 11]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [DoubleDouble::ONE; 11];
        for n in 1..11 {
            table[n] = table[n - 1] / n as f64;
        }
        table
    })
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleDouble {
    pub const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };
    pub const ONE: DoubleDouble = DoubleDouble { hi: 1.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn mul_pow2(self, p: f64) -> Self {
        DoubleDouble {
            hi: self.hi * p,
            lo: self.lo * p,
        }
    }

    pub fn square(self) -> Self {
        self * self
    }

    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return DoubleDouble::ZERO;
        }
        let y = self.hi.sqrt();
        let (p, e) = two_prod(y, y);
        let residual = (self - DoubleDouble { hi: p, lo: e }).to_f64();
        let (hi, lo) = quick_two_sum(y, residual / (2.0 * y));
        DoubleDouble { hi, lo }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return DoubleDouble {
                hi: f64::INFINITY,
                lo: 0.0,
            };
        }
        if self.hi < -745.0 {
            return DoubleDouble::ZERO;
        }
        // x = k ln2 + r, then e^r = (e^(r / 2^10))^(2^10).
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * k).mul_pow2(1.0 / 1024.0);
        // Taylor series; |r| < 3.4e-4, so 10 terms reach far below 1e-32.
        let inv_fact = inverse_factorials();
        let mut power = r;
        let mut sum = r;
        for c in &inv_fact[2..] {
            power = power * r;
            sum += power * *c;
        }
        // sum = e^r - 1; square via (1 + s)^2 - 1 = s (2 + s) to keep precision.
        for _ in 0..10 {
            sum = sum * (sum + 2.0);
        }
        (sum + 1.0).mul_pow2(2f64.powi(k as i32))
    }

    pub fn ln(self) -> Self {
        if self.hi <= 0.0 {
            return DoubleDouble {
                hi: f64::NAN,
                lo: 0.0,
            };
        }
        // Newton on exp(y) = x.
        let mut y = DoubleDouble::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - 1.0;
        }
        y
    }

    pub fn tanh(self) -> Self {
        if self.hi < 0.0 {
            return -(-self).tanh();
        }
        let e = (self * -2.0).exp();
        (DoubleDouble::ONE - e) / (DoubleDouble::ONE + e)
    }

    pub fn sigmoid(self) -> Self {
        if self.hi >= 0.0 {
            DoubleDouble::ONE / (DoubleDouble::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (DoubleDouble::ONE + e)
        }
    }
}

impl From<f64> for DoubleDouble {
    fn from(hi: f64) -> Self {
        DoubleDouble { hi, lo: 0.0 }
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        DoubleDouble { hi, lo }
    }
}

impl Add<f64> for DoubleDouble {
    type Output = Self;
    fn add(self, b: f64) -> Self {
        let (s1, s2) = two_sum(self.hi, b);
        let (hi, lo) = quick_two_sum(s1, s2 + self.lo);
        DoubleDouble { hi, lo }
    }
}

impl AddAssign for DoubleDouble {
    fn add_assign(&mut self, b: Self) {
        *self = *self + b;
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Sub<f64> for DoubleDouble {
    type Output = Self;
    fn sub(self, b: f64) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        DoubleDouble { hi, lo }
    }
}

impl Mul<f64> for DoubleDouble {
    type Output = Self;
    fn mul(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        DoubleDouble { hi, lo }
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        DoubleDouble { hi, lo } + q3
    }
}

impl Div<f64> for DoubleDouble {
    type Output = Self;
    fn div(self, b: f64) -> Self {
        self / DoubleDouble::from(b)
    }
}
