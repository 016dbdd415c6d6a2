//! Legendre polynomials, associated Legendre functions and spherical harmonics.
//!
//! The Condon–Shortley phase `(-1)^m` is part of `P_lm` and therefore of
//! every `Y_lm` built on top of it:
//!
//! ```text
//! P_lm(x) = (-1)^m (1 - x^2)^{m/2} d^m/dx^m P_l(x)
//! Y_lm(θ, φ) = sqrt((2l+1)/(4π) (l-m)!/(l+m)!) P_lm(cos θ) e^{imφ},   m >= 0
//! Y_l,-m = (-1)^m conj(Y_lm)
//! ```
//!
//! Internally everything is computed through the fully normalized functions
//! `λ_lm(θ) = Y_lm(θ, 0)`, which avoid factorial overflow and stay accurate up
//! to `l = 512`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest degree for which the normalized recurrences are documented to be
/// accurate.
pub const MAX_DEGREE: usize = 512;

/// Colatitudes closer than this to either pole are rejected by the derivative
/// routines (the covariant Hessian divides by `sin θ`).
pub const POLAR_CUTOFF: f64 = 1e-6;

/// Position of `(l, m)`, `0 <= m <= l`, in a triangular array.
#[inline]
pub fn lm_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

/// Number of entries of a triangular array up to `lmax`.
#[inline]
pub fn triangular_len(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 2) / 2
}

fn check_unit_interval(x: f64) -> Result<()> {
    if !(x.abs() <= 1.0) {
        return Err(Error::Domain(format!("|x| must be <= 1, got {x}")));
    }
    Ok(())
}

/// Legendre polynomial `P_l(x)` by the three-term recurrence.
pub fn legendre_p(l: usize, x: f64) -> Result<f64> {
    check_unit_interval(x)?;
    if l == 0 {
        return Ok(1.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    for k in 1..l {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    Ok(p)
}

/// `sqrt((2l+1)/(4π) (l-m)!/(l+m)!)`, evaluated as a running product.
fn ylm_norm(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Associated Legendre function `P_lm(x)` with the Condon–Shortley phase.
///
/// Values are obtained from the normalized recurrence and rescaled, so they
/// are accurate wherever the result itself is representable.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> Result<f64> {
    check_unit_interval(x)?;
    if m > l {
        return Err(Error::InvalidIndex {
            l: l as i64,
            m: m as i64,
        });
    }
    let s = (1.0 - x * x).max(0.0).sqrt();
    Ok(normalized_legendre(l, m, x, s) / ylm_norm(l, m))
}

/// `λ_lm(x) = Y_lm(arccos x, 0)` for `0 <= m <= l`; `s` is `sqrt(1 - x^2)`.
pub fn normalized_legendre(l: usize, m: usize, x: f64, s: f64) -> f64 {
    debug_assert!(m <= l);
    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=m {
        let kf = k as f64;
        pmm *= -((2.0 * kf + 1.0) / (2.0 * kf)).sqrt() * s;
    }
    if l == m {
        return pmm;
    }
    let mf = m as f64;
    let mut p_prev = pmm;
    let mut p = x * (2.0 * mf + 3.0).sqrt() * pmm;
    for ll in (m + 2)..=l {
        let lf = ll as f64;
        let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
        let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
        let next = a * (x * p - b * p_prev);
        p_prev = p;
        p = next;
    }
    p
}

/// Table of `λ_lm(cos θ)` for all `0 <= m <= l <= lmax` at one colatitude.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    lmax: usize,
    values: Vec<f64>,
}

impl LegendreTable {
    pub fn new(lmax: usize, theta: f64) -> Self {
        Self::from_cos_sin(lmax, theta.cos(), theta.sin())
    }

    pub fn from_cos_sin(lmax: usize, x: f64, s: f64) -> Self {
        let mut values = vec![0.0; triangular_len(lmax)];
        let mut pmm = 1.0 / (4.0 * PI).sqrt();
        for m in 0..=lmax {
            let mf = m as f64;
            if m > 0 {
                pmm *= -((2.0 * mf + 1.0) / (2.0 * mf)).sqrt() * s;
            }
            values[lm_index(m, m)] = pmm;
            if m == lmax {
                break;
            }
            let mut p_prev = pmm;
            let mut p = x * (2.0 * mf + 3.0).sqrt() * pmm;
            values[lm_index(m + 1, m)] = p;
            for l in (m + 2)..=lmax {
                let lf = l as f64;
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf)
                    / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                    .sqrt();
                let next = a * (x * p - b * p_prev);
                values[lm_index(l, m)] = next;
                p_prev = p;
                p = next;
            }
        }
        Self { lmax, values }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.values[lm_index(l, m)]
    }

    /// `λ_lm` for signed `m`; zero when `|m| > l`.
    #[inline]
    pub fn signed(&self, l: usize, m: i64) -> f64 {
        let am = m.unsigned_abs() as usize;
        if am > l {
            return 0.0;
        }
        let v = self.get(l, am);
        if m < 0 && am % 2 == 1 {
            -v
        } else {
            v
        }
    }

    /// `∂θ λ_lm` by the ladder relation.
    pub fn d_theta(&self, l: usize, m: i64) -> f64 {
        let (cp, cm) = ladder(l, m);
        0.5 * cp * self.signed(l, m + 1) - 0.5 * cm * self.signed(l, m - 1)
    }

    /// `∂θθ λ_lm`: the ladder relation applied twice.
    pub fn d2_theta(&self, l: usize, m: i64) -> f64 {
        let (cp, cm) = ladder(l, m);
        let up = if (m + 1).unsigned_abs() as usize <= l {
            self.d_theta(l, m + 1)
        } else {
            0.0
        };
        let down = if (m - 1).unsigned_abs() as usize <= l {
            self.d_theta(l, m - 1)
        } else {
            0.0
        };
        0.5 * cp * up - 0.5 * cm * down
    }
}

/// Ladder coefficients `sqrt(l(l+1) - m(m+1))` and `sqrt(l(l+1) - m(m-1))`.
#[inline]
fn ladder(l: usize, m: i64) -> (f64, f64) {
    let ll = (l * (l + 1)) as f64;
    let mf = m as f64;
    (
        (ll - mf * (mf + 1.0)).max(0.0).sqrt(),
        (ll - mf * (mf - 1.0)).max(0.0).sqrt(),
    )
}

fn check_index(l: usize, m: i64) -> Result<()> {
    if m.unsigned_abs() as usize > l {
        return Err(Error::InvalidIndex { l: l as i64, m });
    }
    if l > MAX_DEGREE {
        return Err(Error::Domain(format!(
            "degree {l} exceeds the supported maximum {MAX_DEGREE}"
        )));
    }
    Ok(())
}

/// `λ_l,m` for signed `m` computed on its own.
fn signed_normalized(l: usize, m: i64, x: f64, s: f64) -> f64 {
    let am = m.unsigned_abs() as usize;
    if am > l {
        return 0.0;
    }
    let v = normalized_legendre(l, am, x, s);
    if m < 0 && am % 2 == 1 {
        -v
    } else {
        v
    }
}

/// Spherical harmonic `Y_lm(θ, φ)`, orthonormal over the unit sphere.
pub fn ylm(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    check_index(l, m)?;
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("colatitude {theta} outside [0, π]")));
    }
    let lam = signed_normalized(l, m, theta.cos(), theta.sin());
    Ok(Complex64::from_polar(lam, m as f64 * phi))
}

/// Partial derivatives of `Y_lm` with respect to the coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YlmDerivatives {
    pub d_theta: Complex64,
    pub d_phi: Complex64,
    pub d_theta_theta: Complex64,
    pub d_theta_phi: Complex64,
    pub d_phi_phi: Complex64,
}

pub(crate) fn check_polar(theta: f64) -> Result<()> {
    if !(theta > POLAR_CUTOFF && theta < PI - POLAR_CUTOFF) {
        return Err(Error::PolarCutoff {
            theta,
            cutoff: POLAR_CUTOFF,
        });
    }
    Ok(())
}

/// First and second partial derivatives of `Y_lm` at `(θ, φ)`.
///
/// `∂φ Y_lm = i m Y_lm`; the θ-derivative uses the ladder relation
/// `∂θ Y_lm = ½ c₊ Y_l,m+1 e^{-iφ} - ½ c₋ Y_l,m-1 e^{iφ}`, and the second
/// derivatives apply these rules twice.
pub fn ylm_derivatives(l: usize, m: i64, theta: f64, phi: f64) -> Result<YlmDerivatives> {
    check_index(l, m)?;
    check_polar(theta)?;
    let (x, s) = (theta.cos(), theta.sin());
    let lam = |mm: i64| signed_normalized(l, mm, x, s);
    let d1 = |mm: i64| {
        let (cp, cm) = ladder(l, mm);
        0.5 * cp * lam(mm + 1) - 0.5 * cm * lam(mm - 1)
    };
    let (cp, cm) = ladder(l, m);
    let d2 = 0.5 * cp * d1(m + 1) - 0.5 * cm * d1(m - 1);

    let phase = Complex64::from_polar(1.0, m as f64 * phi);
    let mf = m as f64;
    let im = Complex64::new(0.0, mf);
    let y = phase * lam(m);
    let yt = phase * d1(m);
    Ok(YlmDerivatives {
        d_theta: yt,
        d_phi: im * y,
        d_theta_theta: phase * d2,
        d_theta_phi: im * yt,
        d_phi_phi: -mf * mf * y,
    })
}
