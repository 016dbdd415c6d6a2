//! Wigner rotation matrices.
//!
//! `d^l_{m'm}(β)` is evaluated from the explicit single-sum formula
//!
//! ```text
//! d^l_{mn}(β) = (-1)^{l-n} sqrt((l+m)!(l-m)!(l+n)!(l-n)!)
//!               Σ_k (-1)^k cos(β/2)^{m+n+2k} sin(β/2)^{2l-m-n-2k}
//!                   / (k! (l-m-k)! (l-n-k)! (m+n+k)!)
//! ```
//!
//! with every factorial ratio formed in log space. The alternating sum loses
//! accuracy as `l` grows (unitarity degrades past 1e-10 in the low twenties),
//! so [`wigner_d`] only uses it where it collapses to a single term, at
//! `l = max(|m'|, |m|)`, and climbs in `l` with the three-term recurrence
//!
//! ```text
//! d^j = j(2j-1)/sqrt((j²-m²)(j²-m'²)) [ (cos β - m m'/(j(j-1))) d^{j-1}
//!       - sqrt(((j-1)²-m²)((j-1)²-m'²))/((j-1)(2j-1)) d^{j-2} ]
//! ```
//!
//! The full sum stays available as [`wigner_d_explicit`] for small degrees.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

use super::factorial::ln_factorial;

/// Largest degree accepted by [`wigner_d`] and [`wigner_D`].
pub const WIGNER_D_MAX_DEGREE: usize = 512;

/// Largest degree accepted by [`wigner_d_explicit`].
pub const EXPLICIT_MAX_DEGREE: usize = 16;

/// Dense `(2l+1) × (2l+1)` matrix indexed by `m', m ∈ [-l, l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    l: usize,
    data: Vec<T>,
}

impl<T: Copy> Block<T> {
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        2 * self.l + 1
    }

    #[inline]
    fn offset(&self, mp: i64, m: i64) -> usize {
        let l = self.l as i64;
        debug_assert!(mp.abs() <= l && m.abs() <= l);
        ((mp + l) as usize) * self.dim() + (m + l) as usize
    }

    #[inline]
    pub fn get(&self, mp: i64, m: i64) -> T {
        self.data[self.offset(mp, m)]
    }
}

/// Real small-d matrix `d^l_{m'm}(β)`.
pub type SmallD = Block<f64>;

/// Complex `D^l_{m'm}(α, β, γ)`.
pub type WignerDBlock = Block<Complex64>;

fn check_degree(l: usize) -> Result<()> {
    if l > WIGNER_D_MAX_DEGREE {
        return Err(Error::Domain(format!(
            "Wigner d is limited to l <= {WIGNER_D_MAX_DEGREE}, got {l}"
        )));
    }
    Ok(())
}

/// `ln(x^p)` for `x >= 0`, with `0^0 = 1`.
#[inline]
fn ln_pow(x: f64, p: i32) -> f64 {
    if p == 0 {
        0.0
    } else {
        p as f64 * x.ln()
    }
}

/// Single element `d^l_{mn}(β)`.
fn d_element(l: i64, m: i64, n: i64, c: f64, s: f64) -> f64 {
    let lf = |k: i64| ln_factorial(k as usize);
    let half = 0.5 * (lf(l + m) + lf(l - m) + lf(l + n) + lf(l - n));
    let kmin = 0.max(-(m + n));
    let kmax = (l - m).min(l - n);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let pc = (m + n + 2 * k) as i32;
        let ps = (2 * l - m - n - 2 * k) as i32;
        let den = lf(k) + lf(l - m - k) + lf(l - n - k) + lf(m + n + k);
        let term = (half - den + ln_pow(c, pc) + ln_pow(s, ps)).exp();
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if (l - n) % 2 == 0 {
        sum
    } else {
        -sum
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=PI).contains(&beta) {
        return Err(Error::Domain(format!("β = {beta} outside [0, π]")));
    }
    Ok(())
}

/// Small-d matrix straight from the factorial sum.
pub fn wigner_d_explicit(l: usize, beta: f64) -> Result<SmallD> {
    if l > EXPLICIT_MAX_DEGREE {
        return Err(Error::Domain(format!(
            "explicit Wigner d sum is limited to l <= {EXPLICIT_MAX_DEGREE}, got {l}"
        )));
    }
    check_beta(beta)?;
    let (c, s) = ((0.5 * beta).cos(), (0.5 * beta).sin());
    let li = l as i64;
    let mut data = Vec::with_capacity((2 * l + 1) * (2 * l + 1));
    for mp in -li..=li {
        for m in -li..=li {
            data.push(d_element(li, mp, m, c, s));
        }
    }
    Ok(Block { l, data })
}

/// One step of the degree recurrence: `d^j` from `d^{j-1}` and `d^{j-2}`.
#[inline]
fn recur(j: i64, mp: i64, m: i64, cb: f64, prev: f64, prev2: f64) -> f64 {
    let (jf, mf, mpf) = (j as f64, m as f64, mp as f64);
    let a = jf * (2.0 * jf - 1.0) / ((jf * jf - mf * mf) * (jf * jf - mpf * mpf)).sqrt();
    if j == 1 {
        return a * cb * prev;
    }
    let cross = mf * mpf / (jf * (jf - 1.0));
    let j1 = jf - 1.0;
    let back = ((j1 * j1 - mf * mf) * (j1 * j1 - mpf * mpf)).sqrt() / (j1 * (2.0 * jf - 1.0));
    a * ((cb - cross) * prev - back * prev2)
}

/// Small-d matrices for every degree `0..=lmax` at one angle.
pub fn wigner_d_all(lmax: usize, beta: f64) -> Result<Vec<SmallD>> {
    check_degree(lmax)?;
    check_beta(beta)?;
    let (c, s) = ((0.5 * beta).cos(), (0.5 * beta).sin());
    let cb = beta.cos();
    let mut blocks: Vec<SmallD> = (0..=lmax)
        .map(|l| Block {
            l,
            data: vec![0.0; (2 * l + 1) * (2 * l + 1)],
        })
        .collect();
    let lm = lmax as i64;
    for mp in -lm..=lm {
        for m in -lm..=lm {
            let j0 = mp.abs().max(m.abs());
            let mut prev2 = 0.0;
            let mut prev = d_element(j0, mp, m, c, s);
            let b = &mut blocks[j0 as usize];
            let off = b.offset(mp, m);
            b.data[off] = prev;
            for j in (j0 + 1)..=lm {
                let next = recur(j, mp, m, cb, prev, prev2);
                let b = &mut blocks[j as usize];
                let off = b.offset(mp, m);
                b.data[off] = next;
                prev2 = prev;
                prev = next;
            }
        }
    }
    Ok(blocks)
}

/// Wigner small-d matrix for rotation angle `β ∈ [0, π]`.
pub fn wigner_d(l: usize, beta: f64) -> Result<SmallD> {
    check_degree(l)?;
    check_beta(beta)?;
    let (c, s) = ((0.5 * beta).cos(), (0.5 * beta).sin());
    let cb = beta.cos();
    let li = l as i64;
    let mut data = Vec::with_capacity((2 * l + 1) * (2 * l + 1));
    for mp in -li..=li {
        for m in -li..=li {
            let j0 = mp.abs().max(m.abs());
            let mut prev2 = 0.0;
            let mut prev = d_element(j0, mp, m, c, s);
            for j in (j0 + 1)..=li {
                let next = recur(j, mp, m, cb, prev, prev2);
                prev2 = prev;
                prev = next;
            }
            data.push(prev);
        }
    }
    Ok(Block { l, data })
}

/// Full rotation matrix `D^l_{m'm} = e^{-im'α} d^l_{m'm}(β) e^{imγ}`.
#[allow(non_snake_case)]
pub fn wigner_D(l: usize, alpha: f64, beta: f64, gamma: f64) -> Result<WignerDBlock> {
    for (name, v) in [("α", alpha), ("γ", gamma)] {
        if !(0.0..2.0 * PI).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} outside [0, 2π)")));
        }
    }
    let d = wigner_d(l, beta)?;
    let li = l as i64;
    let mut data = Vec::with_capacity(d.data.len());
    for mp in -li..=li {
        for m in -li..=li {
            let phase = -(mp as f64) * alpha + m as f64 * gamma;
            data.push(Complex64::from_polar(d.get(mp, m), phase));
        }
    }
    Ok(Block { l, data })
}

impl WignerDBlock {
    /// Largest deviation of `D D^†` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let l = self.l as i64;
        let mut worst: f64 = 0.0;
        for a in -l..=l {
            for b in -l..=l {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in -l..=l {
                    acc += self.get(a, k) * self.get(b, k).conj();
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }
}
