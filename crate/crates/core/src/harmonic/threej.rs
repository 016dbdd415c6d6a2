//! Wigner 3j symbols and Gaunt integrals.
//!
//! The Racah single sum
//!
//! ```text
//! (l1 l2 l3; m1 m2 m3) = (-1)^{l1-l2-m3} sqrt(Δ(l1 l2 l3))
//!     sqrt((l1+m1)!(l1-m1)!(l2+m2)!(l2-m2)!(l3+m3)!(l3-m3)!)
//!     Σ_k (-1)^k / (k! (l3-l2+k+m1)! (l3-l1+k-m2)! (l1+l2-l3-k)! (l1-k-m1)! (l2-k+m2)!)
//! ```
//!
//! is rewritten with `J1 = l1+l2-l3`, `J2 = l1-l2+l3`, `J3 = -l1+l2+l3` as
//!
//! ```text
//! Σ_k (-1)^k C(J1, k) C(J2, l1-m1-k) C(J3, l2+m2-k) / (J1! J2! J3!)
//! ```
//!
//! so the alternating part is an integer sum, carried out exactly in big
//! integers. [`wigner_3j_exact`] then forms the square of the symbol as an
//! exact rational and rounds once; [`wigner_3j_float`] applies the remaining
//! factorial prefactor through log-factorials. Summing the terms in floating
//! point instead cancels catastrophically (relative error above 1e-2 for
//! `(64 64 64)`), which is why even the floating route keeps the sum exact.
//! [`wigner_3j`] selects the fully exact route whenever every degree is at
//! most [`EXACT_MAX_DEGREE`].

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::factorial::{big_factorial, ln_factorial};

pub const EXACT_MAX_DEGREE: i64 = 20;

/// True when `(l1, l2, l3)` satisfy the triangle conditions.
pub fn triangle(l1: i64, l2: i64, l3: i64) -> bool {
    l1 >= 0 && l2 >= 0 && l3 >= 0 && l3 <= l1 + l2 && l1 <= l2 + l3 && l2 <= l1 + l3
}

/// Selection rules under which a 3j symbol may be nonzero.
pub fn selection_rules(l1: i64, l2: i64, l3: i64, m1: i64, m2: i64, m3: i64) -> bool {
    if !triangle(l1, l2, l3) || m1 + m2 + m3 != 0 {
        return false;
    }
    if m1.abs() > l1 || m2.abs() > l2 || m3.abs() > l3 {
        return false;
    }
    // All-zero orders with odd total degree vanish by symmetry.
    !(m1 == 0 && m2 == 0 && m3 == 0 && (l1 + l2 + l3) % 2 == 1)
}

fn phase(l1: i64, l2: i64, m3: i64) -> f64 {
    if (l1 - l2 - m3).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

fn binomial(n: i64, k: i64) -> BigInt {
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `Σ_k (-1)^k C(J1,k) C(J2,a-k) C(J3,b-k)` with `a = l1-m1`, `b = l2+m2`.
fn racah_integer_sum(l1: i64, l2: i64, l3: i64, m1: i64, m2: i64) -> BigInt {
    let (j1, j2, j3) = (l1 + l2 - l3, l1 - l2 + l3, -l1 + l2 + l3);
    let (a, b) = (l1 - m1, l2 + m2);
    let kmin = 0.max(a - j2).max(b - j3);
    let kmax = j1.min(a).min(b);
    if kmin > kmax {
        return BigInt::zero();
    }
    let mut term = binomial(j1, kmin) * binomial(j2, a - kmin) * binomial(j3, b - kmin);
    let mut sum = BigInt::zero();
    for k in kmin..=kmax {
        if k % 2 == 0 {
            sum += &term;
        } else {
            sum -= &term;
        }
        if k < kmax {
            term *= (j1 - k) * (a - k) * (b - k);
            term /= (k + 1) * (j2 - a + k + 1) * (j3 - b + k + 1);
        }
    }
    sum
}

/// `ln |x|` for a big integer of any size.
fn ln_abs(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits < 1000 {
        return x.abs().to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 900;
    let head: BigInt = x.abs() >> shift;
    head.to_f64().unwrap_or(f64::INFINITY).ln() + shift as f64 * std::f64::consts::LN_2
}

/// 3j symbol evaluated with exact rational arithmetic and a single final
/// rounding.
pub fn wigner_3j_exact(l1: i64, l2: i64, l3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if !selection_rules(l1, l2, l3, m1, m2, m3) {
        return 0.0;
    }
    let sum = racah_integer_sum(l1, l2, l3, m1, m2);
    if sum.is_zero() {
        return 0.0;
    }
    let f = |n: i64| big_factorial(n as usize);
    let num = f(l1 + m1) * f(l1 - m1) * f(l2 + m2) * f(l2 - m2) * f(l3 + m3) * f(l3 - m3);
    let den = f(l1 + l2 - l3) * f(l1 - l2 + l3) * f(-l1 + l2 + l3) * f(l1 + l2 + l3 + 1);
    let sign = if sum.is_negative() { -1.0 } else { 1.0 };
    let squared = BigRational::new(num * &sum * &sum, den);
    let magnitude = squared.to_f64().unwrap_or(f64::NAN).sqrt();
    phase(l1, l2, m3) * sign * magnitude
}

/// 3j symbol with an exact integer sum and a log-factorial prefactor.
pub fn wigner_3j_float(l1: i64, l2: i64, l3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if !selection_rules(l1, l2, l3, m1, m2, m3) {
        return 0.0;
    }
    let sum = racah_integer_sum(l1, l2, l3, m1, m2);
    if sum.is_zero() {
        return 0.0;
    }
    let lf = |n: i64| ln_factorial(n as usize);
    let ln_ratio = lf(l1 + m1) + lf(l1 - m1) + lf(l2 + m2) + lf(l2 - m2) + lf(l3 + m3) + lf(l3 - m3)
        - lf(l1 + l2 - l3)
        - lf(l1 - l2 + l3)
        - lf(-l1 + l2 + l3)
        - lf(l1 + l2 + l3 + 1);
    let sign = if sum.is_negative() { -1.0 } else { 1.0 };
    phase(l1, l2, m3) * sign * (ln_abs(&sum) + 0.5 * ln_ratio).exp()
}

/// 3j symbol, exact for degrees up to [`EXACT_MAX_DEGREE`], floating beyond.
pub fn wigner_3j(l1: i64, l2: i64, l3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if l1.max(l2).max(l3) <= EXACT_MAX_DEGREE {
        wigner_3j_exact(l1, l2, l3, m1, m2, m3)
    } else {
        wigner_3j_float(l1, l2, l3, m1, m2, m3)
    }
}

/// `∫ Y_{l1m1} Y_{l2m2} Y_{l3m3} dx` over the unit sphere.
pub fn gaunt(l1: i64, m1: i64, l2: i64, m2: i64, l3: i64, m3: i64) -> f64 {
    if !selection_rules(l1, l2, l3, m1, m2, m3) || (l1 + l2 + l3) % 2 == 1 {
        return 0.0;
    }
    let norm = (((2 * l1 + 1) * (2 * l2 + 1) * (2 * l3 + 1)) as f64 / (4.0 * PI)).sqrt();
    norm * wigner_3j(l1, l2, l3, 0, 0, 0) * wigner_3j(l1, l2, l3, m1, m2, m3)
}

/// All symbols `(l1 l2 l3; m1 m2 -m1-m2)` for a fixed degree triple.
#[derive(Debug, Clone)]
pub struct ThreeJTable {
    l1: i64,
    l2: i64,
    l3: i64,
    values: Vec<f64>,
}

impl ThreeJTable {
    pub fn new(l1: i64, l2: i64, l3: i64) -> Self {
        let (w1, w2) = (2 * l1 + 1, 2 * l2 + 1);
        let mut values = vec![0.0; (w1 * w2).max(0) as usize];
        if triangle(l1, l2, l3) {
            for m1 in -l1..=l1 {
                for m2 in -l2..=l2 {
                    let m3 = -m1 - m2;
                    if m3.abs() <= l3 {
                        values[((m1 + l1) * w2 + m2 + l2) as usize] =
                            wigner_3j(l1, l2, l3, m1, m2, m3);
                    }
                }
            }
        }
        Self { l1, l2, l3, values }
    }

    pub fn degrees(&self) -> (i64, i64, i64) {
        (self.l1, self.l2, self.l3)
    }

    /// `(l1 l2 l3; m1 m2 -m1-m2)`; zero outside the valid ranges.
    #[inline]
    pub fn get(&self, m1: i64, m2: i64) -> f64 {
        if m1.abs() > self.l1 || m2.abs() > self.l2 {
            return 0.0;
        }
        self.values[((m1 + self.l1) * (2 * self.l2 + 1) + m2 + self.l2) as usize]
    }
}
