//! Needlet frames: the smooth band-pass window, per-scale cubature, analysis
//! and synthesis, and the smoothed power spectrum estimator `Γ̂_j`.
//!
//! Scale `j` keeps degrees in `(B^{j-1}, B^{j+1})`. A frame built for band
//! limit `L` holds scales `0..=J` with `J` the smallest integer such that
//! `B^J >= L`, so the windows sum to one on every degree `1 <= l <= L`. The
//! top scale is truncated at `L`, which is exact for input band-limited at `L`.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{unit_vector, PowerSpectrum};
use crate::grid::{
    analyze_observed, build_grid, gauss_legendre, synthesize, Alm, SphereGrid, SphereMap,
};
use crate::spectra::estimate_cl;

const BUMP_NODES: usize = 96;

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

fn bump_integral(a: f64, b: f64) -> f64 {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (x, w) = RULE.get_or_init(|| gauss_legendre(BUMP_NODES));
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    half * x.iter().zip(w).map(|(xi, wi)| wi * bump(mid + half * xi)).sum::<f64>()
}

/// Smooth step from 0 at `u = -1` to 1 at `u = 1`.
fn smooth_step(u: f64) -> f64 {
    static TOTAL: OnceLock<f64> = OnceLock::new();
    if u <= -1.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let total = *TOTAL.get_or_init(|| bump_integral(-1.0, 1.0));
    // Integrate over the shorter side for accuracy near both ends.
    if u <= 0.0 {
        bump_integral(-1.0, u) / total
    } else {
        1.0 - bump_integral(u, 1.0) / total
    }
}

/// Band-pass window `b` with bandwidth `B`.
#[derive(Debug, Clone)]
pub struct NeedletWindow {
    bandwidth: f64,
    j_max: usize,
    /// `samples[j][l] = b(l / B^j)` for `l <= ⌊B^{j+1}⌋`.
    samples: Vec<Vec<f64>>,
}

/// Window with bandwidth `B` tabulated for scales `0..=j_max`.
pub fn build_window(bandwidth: f64, j_max: usize) -> Result<NeedletWindow> {
    if !(bandwidth > 1.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "needlet bandwidth must exceed 1, got {bandwidth}"
        )));
    }
    let top = bandwidth.powi(j_max as i32 + 1);
    if top > 1e7 {
        return Err(Error::InvalidParameter(format!(
            "B^(j_max+1) = {top:e} is too large to tabulate"
        )));
    }
    let mut w = NeedletWindow {
        bandwidth,
        j_max,
        samples: Vec::new(),
    };
    w.samples = (0..=j_max)
        .map(|j| {
            let hi = bandwidth.powi(j as i32 + 1).floor() as usize;
            let scale = bandwidth.powi(j as i32);
            (0..=hi).map(|l| w.b(l as f64 / scale)).collect()
        })
        .collect();
    Ok(w)
}

impl NeedletWindow {
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// `φ(t)`: 1 up to `1/B`, 0 from 1 on, smooth in between.
    pub fn phi(&self, t: f64) -> f64 {
        let bb = self.bandwidth;
        if t <= 1.0 / bb {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            smooth_step(1.0 - 2.0 * bb * (t - 1.0 / bb) / (bb - 1.0))
        }
    }

    /// `b²(ξ) = φ(ξ/B) - φ(ξ)`.
    pub fn b2(&self, xi: f64) -> f64 {
        (self.phi(xi / self.bandwidth) - self.phi(xi)).max(0.0)
    }

    pub fn b(&self, xi: f64) -> f64 {
        self.b2(xi).sqrt()
    }

    /// `b(l / B^j)`, from the table when tabulated.
    pub fn at(&self, l: usize, j: usize) -> f64 {
        match self.samples.get(j).and_then(|s| s.get(l)) {
            Some(&v) => v,
            None => {
                let xi = l as f64 / self.bandwidth.powi(j as i32);
                if xi >= self.bandwidth {
                    0.0
                } else {
                    self.b(xi)
                }
            }
        }
    }

    /// Degrees with a nonzero window at scale `j`, clipped to `lmax`.
    pub fn support(&self, j: usize, lmax: usize) -> (usize, usize) {
        let hi = (self.bandwidth.powi(j as i32 + 1).floor() as usize).min(lmax);
        let lo = (self.bandwidth.powi(j as i32 - 1).floor() as usize).min(hi);
        (lo, hi)
    }

    /// `Σ_j b²(l / B^j)` over the tabulated scales.
    pub fn partition_sum(&self, l: usize) -> f64 {
        (0..=self.j_max).map(|j| self.at(l, j).powi(2)).sum()
    }
}

/// Window plus one Gauss–Legendre cubature grid per scale.
#[derive(Debug, Clone)]
pub struct NeedletFrame {
    window: NeedletWindow,
    lmax: usize,
    grids: Vec<Arc<SphereGrid>>,
}

impl NeedletFrame {
    pub fn new(bandwidth: f64, lmax: usize) -> Result<Self> {
        if lmax == 0 {
            return Err(Error::InvalidParameter("needlet frame needs lmax >= 1".into()));
        }
        if !(bandwidth > 1.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "needlet bandwidth must exceed 1, got {bandwidth}"
            )));
        }
        let mut j_max = 1;
        while bandwidth.powi(j_max as i32) < lmax as f64 {
            j_max += 1;
        }
        let window = build_window(bandwidth, j_max)?;
        let grids = (0..=j_max)
            .map(|j| build_grid(window.support(j, lmax).1.max(2)))
            .collect::<Result<_>>()?;
        Ok(Self {
            window,
            lmax,
            grids,
        })
    }

    pub fn window(&self) -> &NeedletWindow {
        &self.window
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn j_max(&self) -> usize {
        self.window.j_max
    }

    pub fn grid(&self, j: usize) -> Result<&Arc<SphereGrid>> {
        self.grids.get(j).ok_or_else(|| {
            Error::BandLimit(format!(
                "scale {j} exceeds the frame's top scale {}",
                self.j_max()
            ))
        })
    }

    /// Cubature points `ξ_jk` as unit vectors.
    pub fn points(&self, j: usize) -> Result<Vec<[f64; 3]>> {
        let g = self.grid(j)?;
        Ok((0..g.npix())
            .map(|p| {
                let (t, f) = g.coords(p);
                unit_vector(t, f)
            })
            .collect())
    }

    /// Cubature weights `λ_jk`.
    pub fn weights(&self, j: usize) -> Result<Vec<f64>> {
        let g = self.grid(j)?;
        Ok((0..g.npix()).map(|p| g.pixel_weight(p / g.nphi())).collect())
    }
}

/// Coefficients `β̂_jk` of one scale, indexed like the scale's grid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedletCoeffs {
    pub j: usize,
    pub beta: Vec<f64>,
}

fn check_alm(alm: &Alm, frame: &NeedletFrame) -> Result<()> {
    if alm.lmax() > frame.lmax {
        return Err(Error::BandLimit(format!(
            "coefficients reach l = {} but the frame stops at {}",
            alm.lmax(),
            frame.lmax
        )));
    }
    Ok(())
}

/// `β̂_jk = √λ_jk Σ_l b(l/B^j) Σ_m a_lm conj(Y_lm(ξ_jk))`.
pub fn needlet_analyze(alm: &Alm, frame: &NeedletFrame, j: usize) -> Result<NeedletCoeffs> {
    check_alm(alm, frame)?;
    let grid = frame.grid(j)?;
    let band = alm
        .resized(grid.lmax())
        .filtered(|l| frame.window.at(l, j));
    let map = synthesize(&band, grid)?;
    let nphi = grid.nphi();
    let beta = map
        .values()
        .iter()
        .enumerate()
        .map(|(p, v)| v * grid.pixel_weight(p / nphi).sqrt())
        .collect();
    Ok(NeedletCoeffs { j, beta })
}

/// Every scale of the frame.
pub fn needlet_analyze_all(alm: &Alm, frame: &NeedletFrame) -> Result<Vec<NeedletCoeffs>> {
    (0..=frame.j_max())
        .into_par_iter()
        .map(|j| needlet_analyze(alm, frame, j))
        .collect()
}

/// Harmonic coefficients of `Σ_k β_jk ψ_jk` for one scale.
pub fn needlet_synthesize_scale(coeffs: &NeedletCoeffs, frame: &NeedletFrame) -> Result<Alm> {
    let grid = frame.grid(coeffs.j)?;
    if coeffs.beta.len() != grid.npix() {
        return Err(Error::InvalidParameter(format!(
            "scale {} has {} coefficients, its cubature has {} points",
            coeffs.j,
            coeffs.beta.len(),
            grid.npix()
        )));
    }
    let nphi = grid.nphi();
    let values = coeffs
        .beta
        .iter()
        .enumerate()
        .map(|(p, b)| b / grid.pixel_weight(p / nphi).sqrt())
        .collect();
    let map = SphereMap::new(grid.clone(), values)?;
    let a = analyze_observed(&map, grid.lmax())?;
    Ok(a.filtered(|l| frame.window.at(l, coeffs.j)).resized(frame.lmax))
}

/// `Σ_{j,k} β_jk ψ_jk` as coefficients up to the frame's band limit.
pub fn needlet_synthesize(coeffs: &[NeedletCoeffs], frame: &NeedletFrame) -> Result<Alm> {
    let mut out = Alm::zeros(frame.lmax);
    for j in 0..=frame.j_max() {
        let c = coeffs
            .iter()
            .find(|c| c.j == j)
            .ok_or_else(|| Error::InvalidParameter(format!("needlet scale {j} is missing")))?;
        let part = needlet_synthesize_scale(c, frame)?;
        for (o, p) in out.as_mut_slice().iter_mut().zip(part.as_slice()) {
            *o += p;
        }
    }
    Ok(out)
}

/// `E Γ̂_j = Σ_l b²(l/B^j) (2l+1) C_l` over degrees up to `lmax`.
pub fn expected_gamma(window: &NeedletWindow, j: usize, cl: &PowerSpectrum, lmax: usize) -> f64 {
    let (lo, hi) = window.support(j, lmax);
    (lo..=hi)
        .map(|l| window.at(l, j).powi(2) * (2 * l + 1) as f64 * cl.get(l))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedletPower {
    pub j: usize,
    pub gamma_hat: f64,
    pub expected: Option<f64>,
}

/// `Γ̂_j = Σ_k β̂²_jk`, with its expectation when a spectrum is supplied.
pub fn needlet_power(
    alm: &Alm,
    frame: &NeedletFrame,
    j: usize,
    cl: Option<&PowerSpectrum>,
) -> Result<NeedletPower> {
    let c = needlet_analyze(alm, frame, j)?;
    Ok(NeedletPower {
        j,
        gamma_hat: c.beta.iter().map(|b| b * b).sum(),
        expected: cl.map(|cl| expected_gamma(&frame.window, j, cl, frame.lmax)),
    })
}

/// `Σ_l b²(l/B^j)(2l+1) Ĉ_l`, the same band power computed from `Ĉ_l`.
pub fn band_power_from_cl(alm: &Alm, frame: &NeedletFrame, j: usize) -> f64 {
    let chat = PowerSpectrum::new(estimate_cl(alm).chat).unwrap_or_else(|_| PowerSpectrum::zeros(0));
    expected_gamma(&frame.window, j, &chat, alm.lmax())
}

fn nearest_observed(map: &SphereMap, theta: f64, phi: f64) -> bool {
    let g = map.grid();
    let ring = g
        .thetas()
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - theta).abs().total_cmp(&(b.1 - theta).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let col = (phi / (2.0 * PI) * g.nphi() as f64).round() as usize % g.nphi();
    map.mask()[ring * g.nphi() + col]
}

/// Masked-sky `Γ̂_j`: coefficients of the observed pixels, summed over the
/// cubature points whose nearest map pixel is observed, divided by the
/// observed fraction of the cubature area.
pub fn needlet_power_masked(
    map: &SphereMap,
    frame: &NeedletFrame,
    j: usize,
    cl: Option<&PowerSpectrum>,
) -> Result<NeedletPower> {
    let lmax = frame.lmax.min(map.grid().lmax());
    let alm = analyze_observed(map, lmax)?;
    let c = needlet_analyze(&alm, frame, j)?;
    let grid = frame.grid(j)?;
    let nphi = grid.nphi();
    let (mut sum, mut area) = (0.0, 0.0);
    for (p, b) in c.beta.iter().enumerate() {
        let (t, f) = grid.coords(p);
        if nearest_observed(map, t, f) {
            sum += b * b;
            area += grid.pixel_weight(p / nphi);
        }
    }
    if area == 0.0 {
        return Err(Error::FullyMasked);
    }
    Ok(NeedletPower {
        j,
        gamma_hat: sum * 4.0 * PI / area,
        expected: cl.map(|cl| expected_gamma(&frame.window, j, cl, frame.lmax)),
    })
}
