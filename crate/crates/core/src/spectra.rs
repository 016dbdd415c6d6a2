//! Angular power spectrum estimators: the full-sky `Ĉ_l`, multi-channel
//! auto- and cross-power spectra, the Hausman noise-misspecification test
//! with its Brownian functional, and masked-sky coefficients with their
//! exact coupling covariance.
//!
//! Statistics start at `l = 2`; the monopole and dipole are never used.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{ChannelSet, PowerSpectrum};
use crate::grid::{analyze_observed, apply_mask, build_grid, Alm, Mask, SphereMap};
use crate::harmonic::LegendreTable;

/// First degree used by every spectral statistic.
pub const L_MIN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    Raw,
    Auto,
    Cross,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub kind: EstimateKind,
    /// Estimate for every `l = 0..=lmax`.
    pub chat: Vec<f64>,
}

impl SpectrumEstimate {
    pub fn lmax(&self) -> usize {
        self.chat.len() - 1
    }
}

/// `Σ_{m=-l}^{l} a_lm conj(b_lm)` for real fields (always real).
fn degree_product(a: &Alm, b: &Alm, l: usize) -> f64 {
    let mut s = (a.get(l, 0) * b.get(l, 0).conj()).re;
    for m in 1..=l as i64 {
        s += 2.0 * (a.get(l, m) * b.get(l, m).conj()).re;
    }
    s
}

/// `Ĉ_l = (2l+1)^{-1} Σ_m |a_lm|²`.
pub fn estimate_cl(alm: &Alm) -> SpectrumEstimate {
    let chat = (0..=alm.lmax())
        .map(|l| degree_product(alm, alm, l) / (2 * l + 1) as f64)
        .collect();
    SpectrumEstimate {
        kind: EstimateKind::Raw,
        chat,
    }
}

fn check_declared(channels: &ChannelSet, declared: &[PowerSpectrum]) -> Result<()> {
    if declared.len() != channels.p() {
        return Err(Error::InvalidParameter(format!(
            "{} channels but {} declared noise spectra",
            channels.p(),
            declared.len()
        )));
    }
    if let Some(n) = declared.iter().find(|n| n.lmax() < channels.lmax()) {
        return Err(Error::BandLimit(format!(
            "declared noise stops at l = {}, channels reach l = {}",
            n.lmax(),
            channels.lmax()
        )));
    }
    Ok(())
}

/// Auto-power spectrum `(1/p) Σ_i (Ĉ_il - C^{N_i}_l)` with explicit noise.
pub fn auto_power_with(channels: &ChannelSet, declared: &[PowerSpectrum]) -> Result<SpectrumEstimate> {
    check_declared(channels, declared)?;
    let p = channels.p() as f64;
    let chat = (0..=channels.lmax())
        .map(|l| {
            let s: f64 = channels
                .alms()
                .iter()
                .zip(declared)
                .map(|(a, n)| degree_product(a, a, l) / (2 * l + 1) as f64 - n.get(l))
                .sum();
            s / p
        })
        .collect();
    Ok(SpectrumEstimate {
        kind: EstimateKind::Auto,
        chat,
    })
}

/// Auto-power spectrum using the noise spectra the channels were built with.
pub fn auto_power(channels: &ChannelSet) -> Result<SpectrumEstimate> {
    auto_power_with(channels, channels.noise_spectra())
}

/// Cross-power spectrum averaged over all channel pairs `i < j`.
pub fn cross_power(channels: &ChannelSet) -> Result<SpectrumEstimate> {
    let p = channels.p();
    if p < 2 {
        return Err(Error::InvalidParameter(
            "the cross-power spectrum needs at least two channels".into(),
        ));
    }
    let alms = channels.alms();
    let pairs = (p * (p - 1) / 2) as f64;
    let chat = (0..=channels.lmax())
        .map(|l| {
            let mut s = 0.0;
            for i in 0..p {
                for j in (i + 1)..p {
                    s += degree_product(&alms[i], &alms[j], l);
                }
            }
            s / ((2 * l + 1) as f64 * pairs)
        })
        .collect();
    Ok(SpectrumEstimate {
        kind: EstimateKind::Cross,
        chat,
    })
}

fn noise_sums(noise: &[f64]) -> (f64, f64, f64) {
    let sum: f64 = noise.iter().sum();
    let sq: f64 = noise.iter().map(|n| n * n).sum();
    // Σ_{i<j} N_i N_j
    let pairs = 0.5 * (sum * sum - sq);
    (sum, sq, pairs)
}

/// Exact Gaussian variance of the auto-power spectrum at degree `l`.
pub fn var_auto(l: usize, c: f64, noise: &[f64]) -> f64 {
    let p = noise.len() as f64;
    let (sum, sq, _) = noise_sums(noise);
    2.0 / (2 * l + 1) as f64 * (c * c + 2.0 * c * sum / (p * p) + sq / (p * p))
}

/// Exact Gaussian variance of the cross-power spectrum at degree `l`.
pub fn var_cross(l: usize, c: f64, noise: &[f64]) -> f64 {
    let p = noise.len() as f64;
    let (sum, _, pairs) = noise_sums(noise);
    2.0 / (2 * l + 1) as f64
        * (c * c + 2.0 * c * sum / (p * p) + 2.0 * pairs / (p * p * (p - 1.0) * (p - 1.0)))
}

/// Exact Gaussian variance of `C̃^CP_l - C̃^A_l`; it does not involve `C_l`.
pub fn var_cross_minus_auto(l: usize, noise: &[f64]) -> f64 {
    let p = noise.len() as f64;
    let (_, sq, pairs) = noise_sums(noise);
    2.0 / (2 * l + 1) as f64 * (sq / (p * p) + 2.0 * pairs / (p * p * (p - 1.0) * (p - 1.0)))
}

/// `H_l` for `l = L_MIN..=lmax` with the variance of each difference.
#[derive(Debug, Clone, PartialEq)]
pub struct HausmanSeries {
    pub l_min: usize,
    pub h: Vec<f64>,
    pub delta_var: Vec<f64>,
}

impl HausmanSeries {
    /// `H_l`, if `l` is in range.
    pub fn at(&self, l: usize) -> Option<f64> {
        l.checked_sub(self.l_min).and_then(|k| self.h.get(k).copied())
    }
}

/// Standardized difference between the cross- and auto-power spectra, with
/// the auto-power spectrum bias-corrected by the declared noise.
pub fn hausman_statistic(channels: &ChannelSet, declared: &[PowerSpectrum]) -> Result<HausmanSeries> {
    let cp = cross_power(channels)?;
    let ap = auto_power_with(channels, declared)?;
    let mut h = Vec::new();
    let mut delta_var = Vec::new();
    for l in L_MIN..=channels.lmax() {
        let noise: Vec<f64> = declared.iter().map(|n| n.get(l)).collect();
        let v = var_cross_minus_auto(l, &noise);
        if !(v > 0.0) {
            return Err(Error::Degenerate(format!(
                "Var(C^CP - C^A) vanishes at l = {l}; declared noise is zero"
            )));
        }
        h.push((cp.chat[l] - ap.chat[l]) / v.sqrt());
        delta_var.push(v);
    }
    Ok(HausmanSeries {
        l_min: L_MIN,
        h,
        delta_var,
    })
}

/// `B_L(r)` on the grid `r = k/L` with its sup-norm and Cramér–von Mises summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianFunctional {
    pub r: Vec<f64>,
    pub b: Vec<f64>,
    pub ks: f64,
    pub cvm: f64,
}

/// Partial-sum process `B_L(r) = L^{-1/2} Σ_{k <= ⌊Lr⌋} H_{l_min + k - 1}`.
///
/// The `k`-th step uses the `k`-th retained degree, so `L` counts degrees
/// from `l_min` and needs `H` up to `l_min + L - 1`.
pub fn brownian_functional(h: &[f64], big_l: usize) -> Result<BrownianFunctional> {
    if big_l == 0 || big_l > h.len() {
        return Err(Error::InvalidParameter(format!(
            "L = {big_l} needs between 1 and {} Hausman values",
            h.len()
        )));
    }
    let norm = 1.0 / (big_l as f64).sqrt();
    let mut b = Vec::with_capacity(big_l + 1);
    let mut acc = 0.0;
    b.push(0.0);
    for v in &h[..big_l] {
        acc += v;
        b.push(acc * norm);
    }
    let r: Vec<f64> = (0..=big_l).map(|k| k as f64 / big_l as f64).collect();
    let ks = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dr = 1.0 / big_l as f64;
    let cvm = b.windows(2).map(|w| 0.5 * (w[0] * w[0] + w[1] * w[1]) * dr).sum();
    Ok(BrownianFunctional { r, b, ks, cvm })
}

/// Masked-sky coefficients `a^M_lm = ∫_{S²\M} T conj(Y_lm) dx` up to `lmax`.
pub fn masked_alm(map: &SphereMap, mask: &Mask, lmax: usize) -> Result<Alm> {
    analyze_observed(&apply_mask(map, mask), lmax)
}

/// Position of `(l, m)`, `-l <= m <= l`, in a full (both signs of `m`) layout.
#[inline]
pub fn full_index(l: usize, m: i64) -> usize {
    ((l * l + l) as i64 + m) as usize
}

/// Coupling integrals and the covariance they induce on masked coefficients.
#[derive(Debug, Clone)]
pub struct MaskedCovariance {
    pub lmax: usize,
    /// Internal band limit of the infinite sum over `l`.
    pub l_int: usize,
    /// Band limit of the cubature grid the integrals are evaluated on.
    pub grid_lmax: usize,
    /// `sup_{l > l_int} C_l`: bound on the omitted part of any diagonal entry.
    pub truncation_bound: f64,
    w: Vec<Complex64>,
    cov: Vec<Complex64>,
}

/// Degree limit of [`coupling_covariance`].
pub const COUPLING_MAX_LMAX: usize = 16;

impl MaskedCovariance {
    fn dim(&self) -> usize {
        (self.lmax + 1) * (self.lmax + 1)
    }

    /// `W_{lm, l1m1} = ∫_{S²\M} Y_lm conj(Y_l1m1) dx`.
    pub fn w(&self, l: usize, m: i64, l1: usize, m1: i64) -> Complex64 {
        self.w[full_index(l, m) * self.dim() + full_index(l1, m1)]
    }

    /// `E a^M_{l1m1} conj(a^M_{l2m2})`.
    pub fn get(&self, l1: usize, m1: i64, l2: usize, m2: i64) -> Complex64 {
        self.cov[full_index(l1, m1) * self.dim() + full_index(l2, m2)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.cov[i * self.dim() + i].re).sum()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.dim();
        let m = DMatrix::from_fn(n, n, |i, j| self.cov[i * n + j]);
        m.symmetric_eigenvalues().min()
    }
}

/// Coupling integrals over the observed sky and the covariance
/// `Σ_{l <= l_int, m} C_l W_{lm,l1m1} conj(W_{lm,l2m2})` with `l_int = 2 lmax`.
///
/// The integrals are the same discrete cubature as [`masked_alm`] on a grid
/// of band limit `l_int + lmax`, so the covariance is exact for fields
/// band-limited at `l_int` and observed on that grid.
pub fn coupling_covariance(mask: &Mask, lmax: usize, cl: &PowerSpectrum) -> Result<MaskedCovariance> {
    if lmax > COUPLING_MAX_LMAX {
        return Err(Error::InvalidParameter(format!(
            "coupling covariance is limited to lmax <= {COUPLING_MAX_LMAX}, got {lmax}"
        )));
    }
    let l_int = 2 * lmax;
    let grid = build_grid(l_int + lmax)?;
    let obs = mask.observed(&grid);
    if obs.iter().all(|&o| !o) {
        return Err(Error::FullyMasked);
    }
    let nphi = grid.nphi();
    let kmax = (l_int + lmax) as i64;
    // Ring Fourier transforms of the observation flags, M_i(k) = Σ_j obs_ij e^{ikφ_j}.
    let ring_ft: Vec<Vec<Complex64>> = (0..grid.ntheta())
        .map(|i| {
            (-kmax..=kmax)
                .map(|k| {
                    (0..nphi)
                        .filter(|&j| obs[i * nphi + j])
                        .map(|j| Complex64::from_polar(1.0, k as f64 * grid.phi(j)))
                        .sum()
                })
                .collect()
        })
        .collect();
    let tables: Vec<LegendreTable> = (0..grid.ntheta())
        .map(|i| LegendreTable::from_cos_sin(l_int, grid.cos_theta(i), grid.sin_theta(i)))
        .collect();

    let n = (lmax + 1) * (lmax + 1);
    let n_int = (l_int + 1) * (l_int + 1);
    let dphi = 2.0 * PI / nphi as f64;
    let mut w = vec![Complex64::new(0.0, 0.0); n_int * n];
    for l in 0..=l_int {
        for m in -(l as i64)..=l as i64 {
            let row = full_index(l, m);
            for l1 in 0..=lmax {
                for m1 in -(l1 as i64)..=l1 as i64 {
                    let k = (m - m1 + kmax) as usize;
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (i, t) in tables.iter().enumerate() {
                        let lam = t.signed(l, m) * t.signed(l1, m1);
                        acc += ring_ft[i][k] * (grid.ring_weight(i) * dphi * lam);
                    }
                    w[row * n + full_index(l1, m1)] = acc;
                }
            }
        }
    }

    let mut cov = vec![Complex64::new(0.0, 0.0); n * n];
    for l in 0..=l_int {
        let c = cl.get(l);
        if c == 0.0 {
            continue;
        }
        for m in -(l as i64)..=l as i64 {
            let row = &w[full_index(l, m) * n..(full_index(l, m) + 1) * n];
            for a in 0..n {
                if row[a] == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let wa = row[a] * c;
                for b in 0..n {
                    cov[a * n + b] += wa * row[b].conj();
                }
            }
        }
    }
    let truncation_bound = cl.as_slice().iter().skip(l_int + 1).fold(0.0f64, |m, &v| m.max(v));
    Ok(MaskedCovariance {
        lmax,
        l_int,
        grid_lmax: l_int + lmax,
        truncation_bound,
        w,
        cov,
    })
}
