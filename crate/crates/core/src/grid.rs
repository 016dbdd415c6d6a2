//! Gauss–Legendre sphere grids, harmonic coefficient storage and the
//! forward/inverse spherical harmonic transforms.
//!
//! A grid with band limit `L` has `L + 1` Gauss–Legendre colatitude rings and
//! `2L + 1` equally spaced longitudes per ring. Cubature on this grid is exact
//! for every product `Y_lm conj(Y_l'm')` with `l, l' <= L`, so [`analyze`] is
//! the exact inverse of [`synthesize`] on band-limited input.
//!
//! Pixels are stored row-major, ring by ring. Masked pixels carry `false` in
//! the mask and contribute nothing to any cubature.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harmonic::{lm_index, triangular_len, LegendreTable};

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes in decreasing order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 1..n {
                let kf = k as f64;
                let p2 = ((2.0 * kf + 1.0) * z * p1 - kf * p0) / (kf + 1.0);
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

#[derive(Debug)]
pub struct SphereGrid {
    lmax: usize,
    thetas: Vec<f64>,
    cos_t: Vec<f64>,
    sin_t: Vec<f64>,
    weights: Vec<f64>,
    nphi: usize,
    legendre: OnceLock<Vec<LegendreTable>>,
}

/// Build the Gauss–Legendre grid for band limit `lmax >= 2`.
pub fn build_grid(lmax: usize) -> Result<Arc<SphereGrid>> {
    SphereGrid::new(lmax).map(Arc::new)
}

impl SphereGrid {
    pub fn new(lmax: usize) -> Result<Self> {
        if lmax < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid band limit must be at least 2, got {lmax}"
            )));
        }
        let (x, weights) = gauss_legendre(lmax + 1);
        let sin_t = x.iter().map(|&c| ((1.0 - c) * (1.0 + c)).sqrt()).collect();
        Ok(Self {
            lmax,
            thetas: x.iter().map(|c| c.acos()).collect(),
            cos_t: x,
            sin_t,
            weights,
            nphi: 2 * lmax + 1,
            legendre: OnceLock::new(),
        })
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn ntheta(&self) -> usize {
        self.thetas.len()
    }

    pub fn nphi(&self) -> usize {
        self.nphi
    }

    pub fn npix(&self) -> usize {
        self.ntheta() * self.nphi
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn cos_theta(&self, ring: usize) -> f64 {
        self.cos_t[ring]
    }

    pub fn sin_theta(&self, ring: usize) -> f64 {
        self.sin_t[ring]
    }

    /// Gauss–Legendre weight of a ring (the colatitude part only).
    pub fn ring_weight(&self, ring: usize) -> f64 {
        self.weights[ring]
    }

    /// Full cubature weight of any pixel on a ring.
    pub fn pixel_weight(&self, ring: usize) -> f64 {
        self.weights[ring] * 2.0 * PI / self.nphi as f64
    }

    pub fn phi(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.nphi as f64
    }

    /// `(θ, φ)` of pixel `p`.
    pub fn coords(&self, p: usize) -> (f64, f64) {
        (self.thetas[p / self.nphi], self.phi(p % self.nphi))
    }

    pub(crate) fn legendre(&self) -> &[LegendreTable] {
        self.legendre.get_or_init(|| {
            (0..self.ntheta())
                .into_par_iter()
                .map(|i| LegendreTable::from_cos_sin(self.lmax, self.cos_t[i], self.sin_t[i]))
                .collect()
        })
    }

    /// `e^{imφ_j}` for `0 <= m <= mmax`, `0 <= j < nphi`, laid out by `m`.
    fn phases(&self, mmax: usize) -> Vec<Complex64> {
        let mut out = Vec::with_capacity((mmax + 1) * self.nphi);
        for m in 0..=mmax {
            for j in 0..self.nphi {
                // Reduce m·j modulo nphi so the angle stays small and exact.
                let k = (m * j) % self.nphi;
                out.push(Complex64::from_polar(1.0, 2.0 * PI * k as f64 / self.nphi as f64));
            }
        }
        out
    }
}

/// Complex harmonic coefficients `a_lm`, `0 <= m <= l <= lmax`, of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct Alm {
    lmax: usize,
    coeffs: Vec<Complex64>,
}

impl Alm {
    pub fn zeros(lmax: usize) -> Self {
        Self {
            lmax,
            coeffs: vec![Complex64::new(0.0, 0.0); triangular_len(lmax)],
        }
    }

    pub fn from_vec(lmax: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != triangular_len(lmax) {
            return Err(Error::InvalidParameter(format!(
                "expected {} coefficients for lmax {lmax}, got {}",
                triangular_len(lmax),
                coeffs.len()
            )));
        }
        Ok(Self { lmax, coeffs })
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// `a_lm` for signed `m`, using `a_l,-m = (-1)^m conj(a_lm)`.
    #[inline]
    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        let am = m.unsigned_abs() as usize;
        if l > self.lmax || am > l {
            return Complex64::new(0.0, 0.0);
        }
        let v = self.coeffs[lm_index(l, am)];
        if m >= 0 {
            v
        } else if am % 2 == 0 {
            v.conj()
        } else {
            -v.conj()
        }
    }

    /// Set `a_lm` for `m >= 0`.
    #[inline]
    pub fn set(&mut self, l: usize, m: usize, v: Complex64) {
        self.coeffs[lm_index(l, m)] = v;
    }

    /// Copy truncated or zero-padded to another band limit.
    pub fn resized(&self, lmax: usize) -> Alm {
        let mut out = Alm::zeros(lmax);
        for l in 0..=lmax.min(self.lmax) {
            for m in 0..=l {
                out.set(l, m, self.coeffs[lm_index(l, m)]);
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Alm {
        Alm {
            lmax: self.lmax,
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }

    /// Multiply every degree by its own factor.
    pub fn filtered(&self, f: impl Fn(usize) -> f64) -> Alm {
        let mut out = self.clone();
        for l in 0..=self.lmax {
            let g = f(l);
            for m in 0..=l {
                out.coeffs[lm_index(l, m)] *= g;
            }
        }
        out
    }

    /// Field value `Σ a_lm Y_lm(θ, φ)` at one point.
    pub fn evaluate(&self, theta: f64, phi: f64) -> f64 {
        let table = LegendreTable::new(self.lmax, theta);
        let mut total = 0.0;
        for m in 0..=self.lmax {
            let mut fm = Complex64::new(0.0, 0.0);
            for l in m..=self.lmax {
                fm += self.coeffs[lm_index(l, m)] * table.get(l, m);
            }
            if m == 0 {
                total += fm.re;
            } else {
                total += 2.0 * (fm * Complex64::from_polar(1.0, m as f64 * phi)).re;
            }
        }
        total
    }
}

/// Field samples on a grid; `mask[p]` is true where pixel `p` is observed.
#[derive(Debug, Clone)]
pub struct SphereMap {
    grid: Arc<SphereGrid>,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl SphereMap {
    pub fn new(grid: Arc<SphereGrid>, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::with_mask(grid, values, vec![true; n])
    }

    pub fn with_mask(grid: Arc<SphereGrid>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.npix() || mask.len() != grid.npix() {
            return Err(Error::InvalidParameter(format!(
                "map needs {} pixels, got {} values and {} mask flags",
                grid.npix(),
                values.len(),
                mask.len()
            )));
        }
        if values.iter().zip(&mask).any(|(v, &obs)| obs && !v.is_finite()) {
            return Err(Error::Domain("observed pixel holds a non-finite value".into()));
        }
        Ok(Self { grid, values, mask })
    }

    /// Map of `f(θ, φ)` at every pixel.
    pub fn from_fn(grid: Arc<SphereGrid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.npix())
            .map(|p| {
                let (t, ph) = grid.coords(p);
                f(t, ph)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<SphereGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&o| !o).count()
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> SphereMap {
        SphereMap {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            mask: self.mask.clone(),
        }
    }
}

/// Inverse transform: `T(x_i) = Σ_lm a_lm Y_lm(x_i)`.
pub fn synthesize(alm: &Alm, grid: &Arc<SphereGrid>) -> Result<SphereMap> {
    if alm.lmax > grid.lmax {
        return Err(Error::BandLimit(format!(
            "coefficients up to l = {} do not fit a grid with band limit {}",
            alm.lmax, grid.lmax
        )));
    }
    let tables = grid.legendre();
    let l = alm.lmax;
    let nphi = grid.nphi;
    let phases = grid.phases(l);
    let rows: Vec<Vec<f64>> = (0..grid.ntheta())
        .into_par_iter()
        .map(|i| {
            let t = &tables[i];
            let fm: Vec<Complex64> = (0..=l)
                .map(|m| (m..=l).map(|ll| alm.coeffs[lm_index(ll, m)] * t.get(ll, m)).sum())
                .collect();
            (0..nphi)
                .map(|j| {
                    let mut v = fm[0].re;
                    for (m, f) in fm.iter().enumerate().skip(1) {
                        v += 2.0 * (f * phases[m * nphi + j]).re;
                    }
                    v
                })
                .collect()
        })
        .collect();
    SphereMap::new(grid.clone(), rows.concat())
}

/// Cubature projection of the observed pixels onto `Y_lm`, `l <= lmax`.
pub fn analyze_observed(map: &SphereMap, lmax: usize) -> Result<Alm> {
    let grid = &map.grid;
    if lmax > grid.lmax {
        return Err(Error::BandLimit(format!(
            "cannot extract l = {lmax} from a grid with band limit {}",
            grid.lmax
        )));
    }
    if map.mask.iter().all(|&o| !o) {
        return Err(Error::FullyMasked);
    }
    let tables = grid.legendre();
    let nphi = grid.nphi;
    let phases = grid.phases(lmax);
    // Per-ring azimuthal transforms G_m(θ_i) = Σ_j T_ij e^{-imφ_j}.
    let ring_fourier: Vec<Vec<Complex64>> = (0..grid.ntheta())
        .into_par_iter()
        .map(|i| {
            let row = &map.values[i * nphi..(i + 1) * nphi];
            let obs = &map.mask[i * nphi..(i + 1) * nphi];
            let w = grid.pixel_weight(i);
            (0..=lmax)
                .map(|m| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in 0..nphi {
                        if obs[j] {
                            acc += phases[m * nphi + j].conj() * row[j];
                        }
                    }
                    acc * w
                })
                .collect()
        })
        .collect();
    let mut alm = Alm::zeros(lmax);
    for l in 0..=lmax {
        for m in 0..=l {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, g) in ring_fourier.iter().enumerate() {
                acc += g[m] * tables[i].get(l, m);
            }
            alm.set(l, m, acc);
        }
    }
    Ok(alm)
}

/// Forward transform of a full-sky map at the grid's band limit.
pub fn analyze(map: &SphereMap) -> Result<Alm> {
    let masked = map.masked_count();
    if masked > 0 {
        return Err(Error::MaskedInput(masked));
    }
    analyze_observed(map, map.grid.lmax)
}

/// Cubature `∫ T dx`; masked pixels contribute zero.
pub fn integrate(map: &SphereMap) -> f64 {
    let grid = &map.grid;
    let nphi = grid.nphi;
    (0..grid.ntheta())
        .map(|i| {
            let s: f64 = (0..nphi)
                .filter(|&j| map.mask[i * nphi + j])
                .map(|j| map.values[i * nphi + j])
                .sum();
            s * grid.pixel_weight(i)
        })
        .sum()
}

/// Excluded sky region.
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    /// Band `|cos θ| < sin b0` around the equator (the galactic plane).
    Band { b0: f64 },
    /// Explicit list of masked pixel indices.
    Pixels(Vec<usize>),
}

impl Mask {
    /// Observation flags for every pixel of `grid`.
    pub fn observed(&self, grid: &SphereGrid) -> Vec<bool> {
        match self {
            Mask::Band { b0 } => {
                let limit = b0.sin();
                (0..grid.npix())
                    .map(|p| !(grid.cos_theta(p / grid.nphi).abs() < limit))
                    .collect()
            }
            Mask::Pixels(list) => {
                let mut obs = vec![true; grid.npix()];
                for &p in list {
                    if p < obs.len() {
                        obs[p] = false;
                    }
                }
                obs
            }
        }
    }
}

/// Copy of `map` with the mask applied on top of any existing flags.
pub fn apply_mask(map: &SphereMap, mask: &Mask) -> SphereMap {
    let obs = mask.observed(&map.grid);
    SphereMap {
        grid: map.grid.clone(),
        values: map.values.clone(),
        mask: map.mask.iter().zip(obs).map(|(&a, b)| a && b).collect(),
    }
}
