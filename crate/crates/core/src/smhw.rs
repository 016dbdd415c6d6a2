//! Spherical Mexican hat wavelet: kernel, transform and coefficient moments.
//!
//! The kernel at the north pole is the planar Mexican hat carried to the
//! sphere by the stereographic radius `x = 2 tan(θ/2)`:
//!
//! ```text
//! Ψ(θ; R) ∝ (1 + x²/4)² (2 - x²/R²) exp(-x² / 2R²)
//! ```
//!
//! After discretization its monopole is removed and it is scaled to unit
//! `L²` norm. Being axisymmetric, it acts on coefficients by
//! `w_lm = a_lm √(4π/(2l+1)) ψ_l` with `ψ_l` its `Y_l0` coefficients.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::unit_vector;
use crate::grid::{build_grid, gauss_legendre, synthesize, Alm, SphereGrid, SphereMap};
use crate::stats::weighted_moments;

/// Default scales in radians.
pub const DEFAULT_SCALES: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];

/// Extra bandwidth `⌈TAIL / R⌉` that keeps the kernel's spectral tail far
/// below double precision.
const TAIL: f64 = 12.0;

/// Minimum number of observed pixels for moments.
pub const MIN_PIXELS: usize = 100;

/// Unnormalized profile at colatitude `θ`.
pub fn raw_profile(theta: f64, r: f64) -> f64 {
    let x = 2.0 * (0.5 * theta).tan();
    let q = x * x / (r * r);
    let e = (-0.5 * q).exp();
    if e == 0.0 {
        return 0.0;
    }
    let s = 1.0 + 0.25 * x * x;
    s * s * (2.0 - q) * e / (2.0 * PI).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmhwKernel {
    pub r: f64,
    pub lmax: usize,
    /// Normalizing constant `N(R)` of the raw profile.
    pub norm: f64,
    /// Monopole removed from `raw / N` before use.
    pub offset: f64,
    /// `Y_l0` coefficients `ψ_l`, `l = 0..=lmax`.
    pub psi: Vec<f64>,
    /// `(Σ_{l > lmax} ψ_l²)^{1/2}`: the kernel norm lost by band-limiting.
    pub truncation: f64,
}

impl SmhwKernel {
    /// Compensated, normalized profile `Ψ(θ; R)`.
    pub fn profile(&self, theta: f64) -> f64 {
        raw_profile(theta, self.r) / self.norm - self.offset
    }

    /// Band limit at which the kernel is resolved to double precision.
    pub fn fine_lmax(&self) -> usize {
        self.lmax + (TAIL / self.r).ceil() as usize
    }
}

/// Axial quadrature `(θ_i, 2π w_i)` with `n` Gauss–Legendre nodes in `cos θ`.
fn axial_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect(),
        w.iter().map(|v| 2.0 * PI * v).collect(),
    )
}

/// Kernel at scale `R` for fields up to `lmax`.
pub fn smhw_kernel(r: f64, lmax: usize) -> Result<SmhwKernel> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameter(format!("wavelet scale must be positive, got {r}")));
    }
    let fine = lmax + (TAIL / r).ceil() as usize;
    let (thetas, weights) = axial_rule(fine + 1);
    let raw: Vec<f64> = thetas.iter().map(|&t| raw_profile(t, r)).collect();
    let mean = raw.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / (4.0 * PI);
    let l2: f64 = raw.iter().zip(&weights).map(|(v, w)| (v - mean).powi(2) * w).sum();
    if !(l2 > 0.0) {
        return Err(Error::Degenerate(format!("kernel at R = {r} vanishes on the grid")));
    }
    let norm = l2.sqrt();
    let offset = mean / norm;
    let psi_all: Vec<f64> = {
        let mut acc = vec![0.0; fine + 1];
        for ((&t, &w), &v) in thetas.iter().zip(&weights).zip(&raw) {
            let c = t.cos();
            let val = (v / norm - offset) * w;
            // Legendre recurrence; Y_l0 = √((2l+1)/4π) P_l.
            let (mut p0, mut p1) = (1.0, c);
            for (l, a) in acc.iter_mut().enumerate() {
                let pl = match l {
                    0 => 1.0,
                    1 => c,
                    _ => {
                        let lf = l as f64;
                        let next = ((2.0 * lf - 1.0) * c * p1 - (lf - 1.0) * p0) / lf;
                        p0 = p1;
                        p1 = next;
                        next
                    }
                };
                *a += val * ((2 * l + 1) as f64 / (4.0 * PI)).sqrt() * pl;
            }
        }
        acc
    };
    let truncation = psi_all[lmax + 1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut psi = psi_all[..=lmax].to_vec();
    psi[0] = 0.0;
    Ok(SmhwKernel {
        r,
        lmax,
        norm,
        offset,
        psi,
        truncation,
    })
}

/// `(∫Ψ, ∫Ψ²)` by an independent axial rule of `n` nodes.
pub fn kernel_moments(kernel: &SmhwKernel, n: usize) -> (f64, f64) {
    let (thetas, weights) = axial_rule(n);
    let mut m = (0.0, 0.0);
    for (t, w) in thetas.iter().zip(&weights) {
        let v = kernel.profile(*t);
        m.0 += v * w;
        m.1 += v * v * w;
    }
    m
}

/// Wavelet coefficients `w(x; R)` at every pixel.
#[derive(Debug, Clone)]
pub struct WaveletCoeffMap {
    pub r: f64,
    pub map: SphereMap,
}

/// Wavelet coefficients of the field in harmonic space.
pub fn smhw_coefficients(alm: &Alm, kernel: &SmhwKernel) -> Result<Alm> {
    if alm.lmax() > kernel.lmax {
        return Err(Error::BandLimit(format!(
            "kernel built for lmax {}, coefficients reach {}",
            kernel.lmax,
            alm.lmax()
        )));
    }
    Ok(alm.filtered(|l| (4.0 * PI / (2 * l + 1) as f64).sqrt() * kernel.psi[l]))
}

/// `w(x; R)` on every pixel of `grid`, observed everywhere.
pub fn smhw_transform(alm: &Alm, kernel: &SmhwKernel, grid: &Arc<SphereGrid>) -> Result<WaveletCoeffMap> {
    let w = smhw_coefficients(alm, kernel)?;
    Ok(WaveletCoeffMap {
        r: kernel.r,
        map: synthesize(&w, grid)?,
    })
}

/// `w(x; R) = ∫ T(y) Ψ(∠(x, y); R) dy` evaluated by cubature at each center.
pub fn smhw_direct(alm: &Alm, kernel: &SmhwKernel, centers: &[(f64, f64)]) -> Result<Vec<f64>> {
    let fine = build_grid(alm.lmax() + (TAIL / kernel.r).ceil() as usize)?;
    let map = synthesize(alm, &fine)?;
    let nphi = fine.nphi();
    let pts: Vec<([f64; 3], f64)> = (0..fine.npix())
        .map(|p| {
            let (t, f) = fine.coords(p);
            (unit_vector(t, f), map.values()[p] * fine.pixel_weight(p / nphi))
        })
        .collect();
    Ok(centers
        .par_iter()
        .map(|&(t, f)| {
            let c = unit_vector(t, f);
            pts.iter()
                .map(|(u, tw)| {
                    let dot = (u[0] * c[0] + u[1] * c[1] + u[2] * c[2]).clamp(-1.0, 1.0);
                    tw * kernel.profile(dot.acos())
                })
                .sum()
        })
        .collect())
}

/// Area-weighted skewness and excess kurtosis over observed pixels.
pub fn smhw_moments(coeffs: &WaveletCoeffMap, observed: Option<&[bool]>) -> Result<(f64, f64)> {
    let map = &coeffs.map;
    let grid = map.grid();
    let nphi = grid.nphi();
    let mut x = Vec::new();
    let mut w = Vec::new();
    for (p, &v) in map.values().iter().enumerate() {
        let obs = map.mask()[p] && observed.is_none_or(|o| o.get(p).copied().unwrap_or(false));
        if obs {
            x.push(v);
            w.push(grid.pixel_weight(p / nphi));
        }
    }
    if x.len() < MIN_PIXELS {
        return Err(Error::InsufficientSamples {
            needed: MIN_PIXELS,
            got: x.len(),
        });
    }
    weighted_moments(&x, &w)
}
