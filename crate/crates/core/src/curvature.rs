//! Local curvature of a field through its covariant Hessian, point
//! classification and thresholded hill/lake densities.
//!
//! In the orthonormal frame `(e_θ, e_φ)` the covariant Hessian is
//!
//! ```text
//! H_θθ = T_θθ
//! H_θφ = (T_θφ - cot θ T_φ) / sin θ
//! H_φφ = (T_φφ + sin θ cos θ T_θ) / sin² θ
//! ```
//!
//! A point is a hill when both eigenvalues are positive and a lake when both
//! are negative. `h(ν)` counts hills and `l(ν)` counts lakes among the pixels
//! with `T >= νσ`.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Alm, SphereGrid};
use crate::harmonic::legendre::check_polar;
use crate::harmonic::LegendreTable;

/// Default relative classification tolerance.
pub const DEFAULT_TAU: f64 = 1e-9;

/// Field value and its coordinate partial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldDerivatives {
    pub t: f64,
    pub t_theta: f64,
    pub t_phi: f64,
    pub t_theta_theta: f64,
    pub t_theta_phi: f64,
    pub t_phi_phi: f64,
}

/// Per-`m` sums `Σ_l a_lm ∂θ^k λ_lm(θ)`, `k = 0, 1, 2`.
struct RingSums {
    f: [Vec<Complex64>; 3],
}

fn ring_sums(alm: &Alm, table: &LegendreTable) -> RingSums {
    let lmax = alm.lmax();
    let mut f = [
        vec![Complex64::new(0.0, 0.0); lmax + 1],
        vec![Complex64::new(0.0, 0.0); lmax + 1],
        vec![Complex64::new(0.0, 0.0); lmax + 1],
    ];
    for m in 0..=lmax {
        let mi = m as i64;
        for l in m..=lmax {
            let a = alm.get(l, mi);
            f[0][m] += a * table.get(l, m);
            f[1][m] += a * table.d_theta(l, mi);
            f[2][m] += a * table.d2_theta(l, mi);
        }
    }
    RingSums { f }
}

fn eval_ring(s: &RingSums, phi: f64) -> FieldDerivatives {
    let [f0, f1, f2] = &s.f;
    let mut d = FieldDerivatives {
        t: f0[0].re,
        t_theta: f1[0].re,
        t_theta_theta: f2[0].re,
        ..Default::default()
    };
    for m in 1..f0.len() {
        let mf = m as f64;
        let e = Complex64::from_polar(2.0, mf * phi);
        let (g0, g1) = (f0[m] * e, f1[m] * e);
        d.t += g0.re;
        d.t_theta += g1.re;
        d.t_theta_theta += (f2[m] * e).re;
        // ∂φ multiplies by i m, so the real part picks up -m Im.
        d.t_phi -= mf * g0.im;
        d.t_theta_phi -= mf * g1.im;
        d.t_phi_phi -= mf * mf * g0.re;
    }
    d
}

/// `T` and its five partial derivatives at `(θ, φ)`.
pub fn field_derivatives(alm: &Alm, theta: f64, phi: f64) -> Result<FieldDerivatives> {
    check_polar(theta)?;
    let table = LegendreTable::new(alm.lmax(), theta);
    Ok(eval_ring(&ring_sums(alm, &table), phi))
}

/// Covariant Hessian in the orthonormal frame with eigenvalues `λ1 >= λ2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovariantHessian {
    pub h: [[f64; 2]; 2],
    pub eigs: (f64, f64),
}

pub fn covariant_hessian(d: &FieldDerivatives, theta: f64) -> Result<CovariantHessian> {
    check_polar(theta)?;
    let (s, c) = theta.sin_cos();
    let htt = d.t_theta_theta;
    let htp = (d.t_theta_phi - c / s * d.t_phi) / s;
    let hpp = (d.t_phi_phi + s * c * d.t_theta) / (s * s);
    let mean = 0.5 * (htt + hpp);
    let rad = (0.25 * (htt - hpp) * (htt - hpp) + htp * htp).sqrt();
    Ok(CovariantHessian {
        h: [[htt, htp], [htp, hpp]],
        eigs: (mean + rad, mean - rad),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureClass {
    /// Both eigenvalues positive.
    Hill,
    /// Both eigenvalues negative.
    Lake,
    Saddle,
    /// Some eigenvalue within the tolerance of zero.
    Degenerate,
}

pub fn classify_point(h: &CovariantHessian, tau: f64) -> CurvatureClass {
    let (l1, l2) = h.eigs;
    if l2 > tau {
        CurvatureClass::Hill
    } else if l1 < -tau {
        CurvatureClass::Lake
    } else if l1 > tau && l2 < -tau {
        CurvatureClass::Saddle
    } else {
        CurvatureClass::Degenerate
    }
}

/// Field value and Hessian at every pixel of `grid`.
pub fn grid_hessians(alm: &Alm, grid: &Arc<SphereGrid>) -> Result<Vec<(f64, CovariantHessian)>> {
    if alm.lmax() > grid.lmax() {
        return Err(Error::BandLimit(format!(
            "coefficients up to l = {} do not fit a grid with band limit {}",
            alm.lmax(),
            grid.lmax()
        )));
    }
    let nphi = grid.nphi();
    let rows: Vec<Vec<(f64, CovariantHessian)>> = (0..grid.ntheta())
        .into_par_iter()
        .map(|i| {
            let theta = grid.thetas()[i];
            let table = LegendreTable::from_cos_sin(alm.lmax(), grid.cos_theta(i), grid.sin_theta(i));
            let sums = ring_sums(alm, &table);
            (0..nphi)
                .map(|j| {
                    let d = eval_ring(&sums, grid.phi(j));
                    covariant_hessian(&d, theta).map(|h| (d.t, h))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// Counts on one excursion set `{T >= νσ}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExcursionCounts {
    pub total: usize,
    pub hills: usize,
    pub lakes: usize,
    pub saddles: usize,
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    pub nu: Vec<f64>,
    pub counts: Vec<ExcursionCounts>,
    /// `h(ν)`; `None` where the excursion set is empty.
    pub h: Vec<Option<f64>>,
    pub l: Vec<Option<f64>>,
    pub sigma: f64,
    pub tau: f64,
}

/// Default threshold grid `-3, -2.5, ..., 3`.
pub fn default_nu_grid() -> Vec<f64> {
    (0..13).map(|k| -3.0 + 0.5 * k as f64).collect()
}

/// Hill and lake densities of the field on `grid`'s observed pixels.
///
/// The field is mean-subtracted and thresholds are in units of the sample
/// standard deviation over observed pixels. `tau_rel` scales the largest
/// absolute eigenvalue into the classification tolerance.
pub fn curvature_densities(
    alm: &Alm,
    grid: &Arc<SphereGrid>,
    observed: Option<&[bool]>,
    nu: &[f64],
    tau_rel: f64,
) -> Result<DensityCurve> {
    if nu.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter("threshold grid must be sorted".into()));
    }
    if let Some(o) = observed {
        if o.len() != grid.npix() {
            return Err(Error::InvalidParameter(format!(
                "mask has {} flags, grid has {} pixels",
                o.len(),
                grid.npix()
            )));
        }
    }
    let pts = grid_hessians(alm, grid)?;
    let kept: Vec<&(f64, CovariantHessian)> = pts
        .iter()
        .enumerate()
        .filter(|(p, _)| observed.is_none_or(|o| o[*p]))
        .map(|(_, v)| v)
        .collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: kept.len(),
        });
    }
    let n = kept.len() as f64;
    let mean = kept.iter().map(|v| v.0).sum::<f64>() / n;
    let sigma = (kept.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let scale = kept
        .iter()
        .fold(0.0f64, |m, v| m.max(v.1.eigs.0.abs()).max(v.1.eigs.1.abs()));
    let tau = tau_rel * scale;
    let classes: Vec<(f64, CurvatureClass)> = kept
        .iter()
        .map(|(t, h)| (t - mean, classify_point(h, tau)))
        .collect();

    let mut counts = Vec::with_capacity(nu.len());
    for &v in nu {
        let level = v * sigma;
        let mut c = ExcursionCounts::default();
        for &(t, class) in &classes {
            if t >= level {
                c.total += 1;
                match class {
                    CurvatureClass::Hill => c.hills += 1,
                    CurvatureClass::Lake => c.lakes += 1,
                    CurvatureClass::Saddle => c.saddles += 1,
                    CurvatureClass::Degenerate => c.degenerate += 1,
                }
            }
        }
        counts.push(c);
    }
    let frac = |k: usize, c: &ExcursionCounts| (c.total > 0).then(|| k as f64 / c.total as f64);
    Ok(DensityCurve {
        nu: nu.to_vec(),
        h: counts.iter().map(|c| frac(c.hills, c)).collect(),
        l: counts.iter().map(|c| frac(c.lakes, c)).collect(),
        counts,
        sigma,
        tau,
    })
}

/// `h' = h / E h` and `l' = l / E l` against a Monte Carlo baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDensities {
    pub h: Vec<Option<f64>>,
    pub l: Vec<Option<f64>>,
}

pub fn normalized_densities(
    curve: &DensityCurve,
    h_baseline: &[f64],
    l_baseline: &[f64],
) -> Result<NormalizedDensities> {
    let n = curve.nu.len();
    if h_baseline.len() != n || l_baseline.len() != n {
        return Err(Error::InvalidParameter(format!(
            "baseline has {} / {} points, curve has {n}",
            h_baseline.len(),
            l_baseline.len()
        )));
    }
    let ratio = |vals: &[Option<f64>], base: &[f64], name: &str| -> Result<Vec<Option<f64>>> {
        vals.iter()
            .zip(base)
            .zip(&curve.nu)
            .map(|((v, b), nu)| match v {
                None => Ok(None),
                Some(_) if *b == 0.0 => Err(Error::Degenerate(format!(
                    "baseline {name}({nu}) is zero"
                ))),
                Some(x) => Ok(Some(x / b)),
            })
            .collect()
    };
    Ok(NormalizedDensities {
        h: ratio(&curve.h, h_baseline, "h")?,
        l: ratio(&curve.l, l_baseline, "l")?,
    })
}

/// Pointwise mean of defined values over an ensemble of curves.
pub fn mean_densities(curves: &[DensityCurve]) -> (Vec<f64>, Vec<f64>) {
    let n = curves.first().map_or(0, |c| c.nu.len());
    let avg = |pick: &dyn Fn(&DensityCurve) -> &Vec<Option<f64>>, k: usize| {
        let vals: Vec<f64> = curves.iter().filter_map(|c| pick(c)[k]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    (
        (0..n).map(|k| avg(&|c| &c.h, k)).collect(),
        (0..n).map(|k| avg(&|c| &c.l, k)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use std::f64::consts::PI;

    fn cos_theta_field(lmax: usize) -> Alm {
        let mut a = Alm::zeros(lmax);
        a.set(1, 0, Complex64::new((4.0 * PI / 3.0).sqrt(), 0.0));
        a
    }

    #[test]
    fn derivatives_of_cos_theta() {
        let a = cos_theta_field(4);
        let d = field_derivatives(&a, 0.8, 2.0).unwrap();
        assert!((d.t - 0.8f64.cos()).abs() < 1e-14);
        assert!((d.t_theta + 0.8f64.sin()).abs() < 1e-14);
        assert!(d.t_phi.abs() < 1e-14);
        assert!((d.t_theta_theta + 0.8f64.cos()).abs() < 1e-14);
        let h = covariant_hessian(&d, 0.8).unwrap();
        assert!((h.eigs.0 + 0.8f64.cos()).abs() < 1e-14);
        assert!((h.eigs.1 + 0.8f64.cos()).abs() < 1e-14);
        assert!(field_derivatives(&a, 0.0, 0.0).is_err());
    }

    #[test]
    fn monopole_has_no_curvature() {
        let mut a = Alm::zeros(3);
        a.set(0, 0, Complex64::new(2.0, 0.0));
        let d = field_derivatives(&a, 1.1, 0.3).unwrap();
        assert_eq!(d.t_theta, 0.0);
        assert_eq!(d.t_phi_phi, 0.0);
        let h = covariant_hessian(&d, 1.1).unwrap();
        assert_eq!(classify_point(&h, 1e-12), CurvatureClass::Degenerate);
    }

    #[test]
    fn classification_rules() {
        let mk = |a: f64, b: f64| CovariantHessian {
            h: [[a, 0.0], [0.0, b]],
            eigs: (a.max(b), a.min(b)),
        };
        assert_eq!(classify_point(&mk(2.0, 1.0), 0.0), CurvatureClass::Hill);
        assert_eq!(classify_point(&mk(-2.0, -1.0), 0.0), CurvatureClass::Lake);
        assert_eq!(classify_point(&mk(1.0, -1.0), 0.0), CurvatureClass::Saddle);
        assert_eq!(classify_point(&mk(1e-15, -1e-15), 1e-12), CurvatureClass::Degenerate);
    }

    #[test]
    fn self_normalization_is_one() {
        let c = DensityCurve {
            nu: vec![0.0, 1.0, 2.0],
            counts: vec![ExcursionCounts::default(); 3],
            h: vec![Some(0.25), Some(0.5), None],
            l: vec![Some(0.5), Some(0.125), None],
            sigma: 1.0,
            tau: 0.0,
        };
        let n = normalized_densities(&c, &[0.25, 0.5, 0.0], &[0.5, 0.125, 0.0]).unwrap();
        assert_eq!(n.h, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(n.l, vec![Some(1.0), Some(1.0), None]);
        assert!(normalized_densities(&c, &[0.0, 0.5, 0.0], &[0.5, 0.125, 0.0]).is_err());
    }

    #[test]
    fn densities_partition_excursion_sets() {
        let grid = build_grid(12).unwrap();
        let cl = crate::field::PowerSpectrum::flat(12, 1.0).unwrap();
        let a = crate::field::sample_gaussian_alm(&cl, 3);
        let c = curvature_densities(&a, &grid, None, &default_nu_grid(), DEFAULT_TAU).unwrap();
        for k in &c.counts {
            assert_eq!(k.hills + k.lakes + k.saddles + k.degenerate, k.total);
        }
        for (h, l) in c.h.iter().zip(&c.l) {
            if let (Some(h), Some(l)) = (h, l) {
                assert!(h + l <= 1.0);
            }
        }
        assert!(curvature_densities(&a, &grid, None, &[1.0, 0.0], DEFAULT_TAU).is_err());
    }
}
