//! Random field realizations: Gaussian harmonic coefficients drawn from a
//! power spectrum, quadratic (fNL) non-Gaussianity, multi-channel noise and
//! exact rotations.
//!
//! # Random streams
//!
//! Every draw comes from a ChaCha20 generator keyed by a 64-bit seed. The
//! signal uses stream 0 and the noise of channel `i` uses stream `i + 1`, so
//! channels are independent by construction and adding a channel never moves
//! the draws of the others. Within a stream the order is `l` ascending, then
//! `m` ascending from 0, with the real part drawn before the imaginary part;
//! `a_l0` takes a single draw.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{analyze_observed, build_grid, synthesize, Alm, SphereGrid, SphereMap};
use crate::harmonic::{lm_index, wigner_d_all};

/// Angular power spectrum `C_l`, `l = 0..=lmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    cl: Vec<f64>,
}

impl PowerSpectrum {
    pub fn new(cl: Vec<f64>) -> Result<Self> {
        if cl.is_empty() {
            return Err(Error::InvalidParameter("empty power spectrum".into()));
        }
        if let Some((l, v)) = cl.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "C_{l} = {v} is not a finite non-negative number"
            )));
        }
        Ok(Self { cl })
    }

    pub fn zeros(lmax: usize) -> Self {
        Self {
            cl: vec![0.0; lmax + 1],
        }
    }

    /// `C_l = c` for `l >= 2`, zero for the monopole and dipole.
    pub fn flat(lmax: usize, c: f64) -> Result<Self> {
        Self::new((0..=lmax).map(|l| if l < 2 { 0.0 } else { c }).collect())
    }

    /// `C_l ∝ (l(l+1))^{-slope}` for `l >= 2`, scaled so the field has unit
    /// variance `Σ (2l+1) C_l / 4π = 1`.
    pub fn power_law(lmax: usize, slope: f64) -> Result<Self> {
        if lmax < 2 {
            return Err(Error::InvalidParameter(format!(
                "power-law spectrum needs lmax >= 2, got {lmax}"
            )));
        }
        let raw = Self::new(
            (0..=lmax)
                .map(|l| {
                    if l < 2 {
                        0.0
                    } else {
                        ((l * (l + 1)) as f64).powf(-slope)
                    }
                })
                .collect(),
        )?;
        let v = raw.field_variance();
        Ok(raw.scaled(1.0 / v))
    }

    pub fn lmax(&self) -> usize {
        self.cl.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cl
    }

    /// `C_l`, zero beyond `lmax`.
    #[inline]
    pub fn get(&self, l: usize) -> f64 {
        self.cl.get(l).copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            cl: self.cl.iter().map(|v| v * c).collect(),
        }
    }

    pub fn truncated(&self, lmax: usize) -> Self {
        Self {
            cl: (0..=lmax).map(|l| self.get(l)).collect(),
        }
    }

    /// Pointwise variance of the field, `Σ_l (2l+1) C_l / 4π`.
    pub fn field_variance(&self) -> f64 {
        self.cl
            .iter()
            .enumerate()
            .map(|(l, c)| (2 * l + 1) as f64 * c)
            .sum::<f64>()
            / (4.0 * PI)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_alm(cl: &PowerSpectrum, lmax: usize, rng: &mut ChaCha20Rng) -> Alm {
    let mut alm = Alm::zeros(lmax);
    for l in 0..=lmax {
        let c = cl.get(l);
        let sd0 = c.sqrt();
        let sd = (c / 2.0).sqrt();
        let z: f64 = rng.sample(StandardNormal);
        alm.set(l, 0, Complex64::new(sd0 * z, 0.0));
        for m in 1..=l {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            alm.set(l, m, Complex64::new(sd * re, sd * im));
        }
    }
    alm
}

/// Gaussian isotropic coefficients with `E|a_lm|² = C_l`, on the signal stream.
pub fn sample_gaussian_alm(cl: &PowerSpectrum, seed: u64) -> Alm {
    draw_alm(cl, cl.lmax(), &mut rng_for(seed, 0))
}

/// As [`sample_gaussian_alm`] but on an explicit stream and band limit.
pub fn sample_gaussian_alm_stream(cl: &PowerSpectrum, lmax: usize, seed: u64, stream: u64) -> Alm {
    draw_alm(cl, lmax, &mut rng_for(seed, stream))
}

/// Quadratic non-Gaussianity `T = T_G + fnl (T_G² - σ²)` at a fixed band limit.
///
/// `T_G²` has degree `2 lmax`, so its projection back onto `l <= lmax` is
/// exact on a grid of band limit `⌈3 lmax / 2⌉`; the result is therefore the
/// exact band-limited projection of the pixel-space formula.
#[derive(Debug, Clone)]
pub struct FnlTransform {
    lmax: usize,
    work: Arc<SphereGrid>,
}

impl FnlTransform {
    pub fn new(lmax: usize) -> Result<Self> {
        let work = build_grid((3 * lmax).div_ceil(2).max(2))?;
        Ok(Self { lmax, work })
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    /// Coefficients of the subordinated field; `σ² = Σ (2l+1) C_l / 4π` from
    /// the theoretical spectrum.
    pub fn apply(&self, alm: &Alm, cl: &PowerSpectrum, fnl: f64) -> Result<Alm> {
        if alm.lmax() != self.lmax {
            return Err(Error::BandLimit(format!(
                "transform built for lmax {}, coefficients have lmax {}",
                self.lmax,
                alm.lmax()
            )));
        }
        if cl.lmax() < alm.lmax() {
            return Err(Error::BandLimit(format!(
                "theoretical spectrum stops at l = {}, field reaches l = {}",
                cl.lmax(),
                alm.lmax()
            )));
        }
        if fnl == 0.0 {
            return Ok(alm.clone());
        }
        let sigma2 = cl.truncated(self.lmax).field_variance();
        let tg = synthesize(alm, &self.work)?;
        let t = tg.map_values(|v| v + fnl * (v * v - sigma2));
        analyze_observed(&t, self.lmax)
    }
}

/// Subordinated field sampled on `grid`; exactly `synthesize(alm)` when `fnl == 0`.
pub fn apply_fnl(
    alm: &Alm,
    cl: &PowerSpectrum,
    fnl: f64,
    grid: &Arc<SphereGrid>,
) -> Result<SphereMap> {
    if cl.lmax() < alm.lmax() {
        return Err(Error::BandLimit(format!(
            "theoretical spectrum stops at l = {}, field reaches l = {}",
            cl.lmax(),
            alm.lmax()
        )));
    }
    if fnl == 0.0 {
        return synthesize(alm, grid);
    }
    let out = FnlTransform::new(alm.lmax())?.apply(alm, cl, fnl)?;
    synthesize(&out, grid)
}

/// Observations `a_{i;lm} = a^T_lm + a^{N_i}_lm` of one signal in `p` channels.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    alms: Vec<Alm>,
    noise: Vec<PowerSpectrum>,
}

impl ChannelSet {
    pub fn new(alms: Vec<Alm>, noise: Vec<PowerSpectrum>) -> Result<Self> {
        if alms.is_empty() {
            return Err(Error::InvalidParameter("a channel set needs at least one channel".into()));
        }
        if alms.len() != noise.len() {
            return Err(Error::InvalidParameter(format!(
                "{} channels but {} noise spectra",
                alms.len(),
                noise.len()
            )));
        }
        let lmax = alms[0].lmax();
        if alms.iter().any(|a| a.lmax() != lmax) {
            return Err(Error::BandLimit("channels have different band limits".into()));
        }
        Ok(Self { alms, noise })
    }

    pub fn p(&self) -> usize {
        self.alms.len()
    }

    pub fn lmax(&self) -> usize {
        self.alms[0].lmax()
    }

    pub fn alms(&self) -> &[Alm] {
        &self.alms
    }

    pub fn noise_spectra(&self) -> &[PowerSpectrum] {
        &self.noise
    }
}

/// Add independent Gaussian noise drawn from `noise_spectra[i]` to channel `i`.
pub fn add_noise_channels(
    signal: &Alm,
    noise_spectra: &[PowerSpectrum],
    seed: u64,
) -> Result<ChannelSet> {
    let lmax = signal.lmax();
    let alms = noise_spectra
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let noise = sample_gaussian_alm_stream(n, lmax, seed, i as u64 + 1);
            let mut out = signal.clone();
            for (o, v) in out.as_mut_slice().iter_mut().zip(noise.as_slice()) {
                *o += v;
            }
            out
        })
        .collect();
    ChannelSet::new(alms, noise_spectra.to_vec())
}

/// Rotation matrix `R_z(α) R_y(β) R_z(γ)` acting on column vectors.
pub fn euler_matrix(alpha: f64, beta: f64, gamma: f64) -> [[f64; 3]; 3] {
    let rz = |a: f64| [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [
        [beta.cos(), 0.0, beta.sin()],
        [0.0, 1.0, 0.0],
        [-beta.sin(), 0.0, beta.cos()],
    ];
    let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    };
    mul(mul(rz(alpha), ry), rz(gamma))
}

/// Unit vector of `(θ, φ)`.
pub fn unit_vector(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

/// `(θ, φ)` of a unit vector, `φ ∈ [0, 2π)`.
pub fn spherical_coords(v: [f64; 3]) -> (f64, f64) {
    let theta = v[2].clamp(-1.0, 1.0).acos();
    let phi = v[1].atan2(v[0]).rem_euclid(2.0 * PI);
    (theta, phi)
}

/// Image `g·x` of the point `(θ, φ)` under the rotation that [`rotate_alm`]
/// applies for the same Euler angles.
///
/// With `D_{m'm} = e^{-im'α} d_{m'm}(β) e^{imγ}` and `ã_lm = Σ_m' D_{m'm} a_lm'`
/// the point map works out to `g·x = R_z(-α) R_y(β) R_z(γ) x`.
pub fn rotate_point(euler: (f64, f64, f64), theta: f64, phi: f64) -> (f64, f64) {
    let r = euler_matrix(-euler.0, euler.1, euler.2);
    let x = unit_vector(theta, phi);
    let y: Vec<f64> = (0..3).map(|i| (0..3).map(|k| r[i][k] * x[k]).sum()).collect();
    spherical_coords([y[0], y[1], y[2]])
}

/// `ã_lm = Σ_m' D^l_{m'm}(α, β, γ) a_lm'`.
///
/// The rotated field satisfies `T̃(x) = T(g·x)` with `g·x` given by
/// [`rotate_point`]. Any real angles are accepted; `β` must lie in `[0, π]`.
pub fn rotate_alm(alm: &Alm, euler: (f64, f64, f64)) -> Result<Alm> {
    let (alpha, beta, gamma) = euler;
    let lmax = alm.lmax();
    let d = wigner_d_all(lmax, beta)?;
    let mut out = Alm::zeros(lmax);
    for (l, dl) in d.iter().enumerate() {
        let li = l as i64;
        // b_m' = e^{-im'α} a_lm', then ã_lm = e^{imγ} Σ_m' d_{m'm} b_m'.
        let b: Vec<Complex64> = (-li..=li)
            .map(|mp| alm.get(l, mp) * Complex64::from_polar(1.0, -(mp as f64) * alpha))
            .collect();
        for m in 0..=li {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, mp) in (-li..=li).enumerate() {
                acc += b[k] * dl.get(mp, m);
            }
            let v = acc * Complex64::from_polar(1.0, m as f64 * gamma);
            out.as_mut_slice()[lm_index(l, m as usize)] = v;
        }
    }
    // m = 0 is real for a real field; drop round-off in the imaginary part.
    for l in 0..=lmax {
        out.as_mut_slice()[lm_index(l, 0)].im = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;

    #[test]
    fn zero_spectrum_gives_zero_coefficients() {
        let a = sample_gaussian_alm(&PowerSpectrum::zeros(8), 3);
        assert!(a.as_slice().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let cl = PowerSpectrum::flat(16, 1.0).unwrap();
        assert_eq!(sample_gaussian_alm(&cl, 42), sample_gaussian_alm(&cl, 42));
        assert_ne!(sample_gaussian_alm(&cl, 42), sample_gaussian_alm(&cl, 43));
        // Real monopoles of every degree.
        let a = sample_gaussian_alm(&cl, 1);
        assert!((0..=16).all(|l| a.get(l, 0).im == 0.0));
    }

    #[test]
    fn spectrum_validation() {
        assert!(PowerSpectrum::new(vec![1.0, -0.1]).is_err());
        assert!(PowerSpectrum::new(vec![]).is_err());
        let pl = PowerSpectrum::power_law(32, 1.0).unwrap();
        assert!((pl.field_variance() - 1.0).abs() < 1e-14);
        assert_eq!(pl.get(1), 0.0);
        assert_eq!(pl.get(99), 0.0);
    }

    #[test]
    fn fnl_zero_is_plain_synthesis() {
        let g = build_grid(12).unwrap();
        let cl = PowerSpectrum::power_law(12, 1.0).unwrap();
        let a = sample_gaussian_alm(&cl, 5);
        let direct = synthesize(&a, &g).unwrap();
        let via = apply_fnl(&a, &cl, 0.0, &g).unwrap();
        assert_eq!(direct.values(), via.values());
    }

    #[test]
    fn fnl_on_a_constant_field() {
        let g = build_grid(4).unwrap();
        let c = 0.7;
        let mut cl = vec![0.0; 5];
        cl[0] = 2.0;
        let cl = PowerSpectrum::new(cl).unwrap();
        let mut a = Alm::zeros(4);
        a.set(0, 0, Complex64::new(c * 2.0 * PI.sqrt(), 0.0));
        let fnl = 0.3;
        let expected = c + fnl * (c * c - 2.0 / (4.0 * PI));
        let map = apply_fnl(&a, &cl, fnl, &g).unwrap();
        assert!(map.values().iter().all(|v| (v - expected).abs() < 1e-12));
        assert!(apply_fnl(&a, &PowerSpectrum::zeros(2), fnl, &g).is_err());
    }

    #[test]
    fn fnl_projection_is_exact() {
        // The projection of T_G² must match brute-force cubature on a much
        // finer grid.
        let cl = PowerSpectrum::power_law(6, 0.5).unwrap();
        let a = sample_gaussian_alm(&cl, 11);
        let out = FnlTransform::new(6).unwrap().apply(&a, &cl, 2.0).unwrap();
        let fine = build_grid(24).unwrap();
        let s2 = cl.field_variance();
        let t = synthesize(&a, &fine).unwrap().map_values(|v| v + 2.0 * (v * v - s2));
        let reference = analyze_observed(&t, 6).unwrap();
        for (x, y) in out.as_slice().iter().zip(reference.as_slice()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn noise_channels() {
        let cl = PowerSpectrum::flat(8, 1.0).unwrap();
        let s = sample_gaussian_alm(&cl, 9);
        let zero = add_noise_channels(&s, &[PowerSpectrum::zeros(8), PowerSpectrum::zeros(8)], 9)
            .unwrap();
        assert!(zero.alms().iter().all(|a| a == &s));
        let noisy = add_noise_channels(&s, &[cl.clone(), cl.clone()], 9).unwrap();
        assert_ne!(noisy.alms()[0], noisy.alms()[1]);
        // Adding a third channel leaves the first two untouched.
        let three = add_noise_channels(&s, &[cl.clone(), cl.clone(), cl.clone()], 9).unwrap();
        assert_eq!(three.alms()[..2], noisy.alms()[..]);
    }

    #[test]
    fn identity_rotation() {
        let cl = PowerSpectrum::flat(10, 1.0).unwrap();
        let a = sample_gaussian_alm(&cl, 2);
        let r = rotate_alm(&a, (0.0, 0.0, 0.0)).unwrap();
        for (x, y) in a.as_slice().iter().zip(r.as_slice()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn rotation_moves_points() {
        let cl = PowerSpectrum::flat(8, 1.0).unwrap();
        let a = sample_gaussian_alm(&cl, 4);
        let g = (0.7, 1.1, 2.3);
        let r = rotate_alm(&a, g).unwrap();
        for k in 0..25 {
            let (t, p) = (0.1 + 0.12 * k as f64, 0.25 * k as f64);
            let (t2, p2) = rotate_point(g, t, p);
            assert!((r.evaluate(t, p) - a.evaluate(t2, p2)).abs() < 1e-10);
        }
    }
}
