//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p spherestats-cli --test acceptance -- 6 7`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;

use spherestats::bispectrum::bispectrum_i_hat;
use spherestats::curvature::{classify_point, covariant_hessian, field_derivatives, grid_hessians, CurvatureClass, DEFAULT_TAU};
use spherestats::field::{add_noise_channels, rotate_alm, sample_gaussian_alm_stream, spherical_coords, unit_vector, PowerSpectrum};
use spherestats::harmonic::{gaunt, wigner_3j, ylm};
use spherestats::mc::{calibrate_null, power_curve, run_ensemble, sim_seed, splitmix64, PowerPoint, ScenarioConfig};
use spherestats::needlets::{needlet_analyze_all, needlet_power, needlet_synthesize, NeedletFrame};
use spherestats::smhw::{kernel_moments, smhw_coefficients, smhw_direct, smhw_kernel, DEFAULT_SCALES};
use spherestats::spectra::{
    auto_power_with, brownian_functional, coupling_covariance, cross_power, estimate_cl, full_index, hausman_statistic,
};
use spherestats::stats::{chi_squared_cdf, ks_one_sample, mean, normal_cdf, variance};
use spherestats::{analyze_observed, apply_mask, build_grid, synthesize, Alm, Mask};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Uniform draw in [0, 1) from a seed.
fn uniform(seed: u64) -> f64 {
    (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}

fn gaussian(cl: &PowerSpectrum, lmax: usize, seed: u64, i: usize) -> Alm {
    sample_gaussian_alm_stream(cl, lmax, sim_seed(seed, i), 0)
}

fn se_of_mean(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

fn chi_squared_law() -> Outcome {
    let (lmax, l, n) = (64, 32, 2000);
    let cl = PowerSpectrum::power_law(lmax, 1.0).unwrap();
    let dof = (2 * l + 1) as f64;
    let x: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| dof * estimate_cl(&gaussian(&cl, lmax, 101, i)).chat[l] / cl.get(l))
        .collect();
    let ks = ks_one_sample(&x, |v| chi_squared_cdf(dof, v));
    let (m, se, v) = (mean(&x), se_of_mean(&x), variance(&x));
    let pass = ks.p_value > 0.001 && (m - dof).abs() < 3.0 * se && (v / (2.0 * dof) - 1.0).abs() < 0.1;
    outcome(
        pass,
        format!("KS p = {:.3}, mean {m:.3} (65 ± 3×{se:.3}), variance {v:.2} (130 ± 10%)", ks.p_value),
    )
}

fn unbiased_spectrum() -> Outcome {
    let (lmax, n) = (64, 5000);
    let cl = PowerSpectrum::power_law(lmax, 1.0).unwrap();
    let chats: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| estimate_cl(&gaussian(&cl, lmax, 202, i)).chat)
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for l in [8usize, 32, 64] {
        let x: Vec<f64> = chats.iter().map(|c| c[l]).collect();
        let c = cl.get(l);
        let bias_z = (mean(&x) - c) / se_of_mean(&x);
        let var_ratio = variance(&x) / (2.0 * c * c / (2 * l + 1) as f64);
        pass &= bias_z.abs() < 3.0 && (var_ratio - 1.0).abs() < 0.1;
        parts.push(format!("l={l}: bias {bias_z:+.2} SE, Var/theory {var_ratio:.3}"));
    }
    outcome(pass, parts.join("; "))
}

fn auto_cross_gap() -> Outcome {
    let (lmax, l, n) = (32, 32, 5000);
    let cl = PowerSpectrum::flat(lmax, 1.0).unwrap();
    let noise = vec![cl.clone(), cl.clone()];
    let pairs: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = sim_seed(303, i);
            let s = sample_gaussian_alm_stream(&cl, lmax, seed, 0);
            let ch = add_noise_channels(&s, &noise, seed).unwrap();
            let a = auto_power_with(&ch, &noise).unwrap().chat[l];
            let c = cross_power(&ch).unwrap().chat[l];
            (a, c)
        })
        .collect();
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let c: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let gap = variance(&c) - variance(&a);
    let target = 2.0 / (2 * l + 1) as f64 * cl.get(l) * cl.get(l) / 4.0;
    let pass = ((gap - target) / target).abs() < 0.15;
    outcome(
        pass,
        format!(
            "Var(cross) - Var(auto) = {gap:.3e}, expected {target:.3e} (Var(auto) = {:.3e}, Var(cross) = {:.3e})",
            variance(&a),
            variance(&c)
        ),
    )
}

/// `H_l` series of `n` two-channel realizations.
fn hausman_series(lmax: usize, n: usize, seed: u64, declared_scale: f64) -> Vec<Vec<f64>> {
    let cl = PowerSpectrum::flat(lmax, 1.0).unwrap();
    let noise = vec![PowerSpectrum::flat(lmax, 0.5).unwrap(), cl.clone()];
    let declared: Vec<PowerSpectrum> = noise.iter().map(|s| s.scaled(declared_scale)).collect();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = sim_seed(seed, i);
            let s = sample_gaussian_alm_stream(&cl, lmax, seed, 0);
            let ch = add_noise_channels(&s, &noise, seed).unwrap();
            hausman_statistic(&ch, &declared).unwrap().h
        })
        .collect()
}

fn hausman_null() -> Outcome {
    let n = 2000;
    let series = hausman_series(65, n, 404, 1.0);
    let h32: Vec<f64> = series.iter().map(|h| h[32 - 2]).collect();
    let (m, v) = (mean(&h32), variance(&h32));
    let b1: Vec<f64> = series
        .iter()
        .map(|h| *brownian_functional(h, 64).unwrap().b.last().unwrap())
        .collect();
    let ks = ks_one_sample(&b1, normal_cdf);
    let pass = m.abs() < 3.0 * (v / n as f64).sqrt() && (0.9..=1.1).contains(&v) && ks.p_value > 0.001;
    outcome(
        pass,
        format!(
            "mean H_32 = {m:+.4} (bound {:.4}), Var H_32 = {v:.3}, B_64(1) KS p = {:.3}",
            3.0 * (v / n as f64).sqrt(),
            ks.p_value
        ),
    )
}

fn hausman_rate() -> Outcome {
    let series = hausman_series(64, 1000, 505, 0.8);
    let m = |l: usize| mean(&series.iter().map(|h| h[l - 2]).collect::<Vec<_>>());
    let (m16, m64) = (m(16), m(64));
    let ratio = m64 / m16;
    outcome(
        (ratio / 2.0 - 1.0).abs() < 0.3,
        format!("mean H_16 = {m16:.3}, mean H_64 = {m64:.3}, ratio {ratio:.3} (2 ± 30%)"),
    )
}

fn needlet_partition() -> Outcome {
    let frame = NeedletFrame::new(2.0, 64).unwrap();
    let worst = (2..=64)
        .map(|l| (frame.window().partition_sum(l) - 1.0).abs())
        .fold(0.0f64, f64::max);
    outcome(worst < 1e-12, format!("max |Σ_j b² - 1| over l in [2, 64] = {worst:.2e}"))
}

fn needlet_reconstruction() -> Outcome {
    let lmax = 32;
    let frame = NeedletFrame::new(2.0, lmax).unwrap();
    let cl = PowerSpectrum::power_law(lmax, 1.0).unwrap();
    let mut worst = 0.0f64;
    for i in 0..5 {
        let a = gaussian(&cl, lmax, 707, i);
        let back = needlet_synthesize(&needlet_analyze_all(&a, &frame).unwrap(), &frame).unwrap();
        let scale = a.as_slice().iter().map(|c| c.norm()).fold(0.0, f64::max);
        let err = a
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        worst = worst.max(err / scale);
    }
    outcome(worst < 1e-8, format!("max relative coefficient error over 5 fields = {worst:.2e}"))
}

fn needlet_unbiased() -> Outcome {
    let (lmax, j, n) = (32, 3, 1000);
    let frame = NeedletFrame::new(2.0, lmax).unwrap();
    let cl = PowerSpectrum::power_law(lmax, 1.0).unwrap();
    let w = frame.window();
    let scale = 2f64.powi(j as i32);
    let expected: f64 = (0..=lmax)
        .map(|l| w.b2(l as f64 / scale) * cl.get(l) * (2 * l + 1) as f64)
        .sum();
    let g: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| needlet_power(&gaussian(&cl, lmax, 808, i), &frame, j, None).unwrap().gamma_hat)
        .collect();
    let rel = mean(&g) / expected - 1.0;
    outcome(
        rel.abs() < 0.05,
        format!("mean Γ̂_3 = {:.4}, expected {expected:.4}, relative {rel:+.4}", mean(&g)),
    )
}

fn gaunt_and_3j() -> Outcome {
    // Triple products of degree <= 8 have band limit 24, integrated exactly
    // by the band-limit-12 grid.
    let grid = build_grid(12).unwrap();
    let lm: Vec<(i64, i64)> = (0..=8i64).flat_map(|l| (-l..=l).map(move |m| (l, m))).collect();
    let y: Vec<Vec<Complex64>> = lm
        .iter()
        .map(|&(l, m)| {
            (0..grid.npix())
                .map(|p| {
                    let (t, f) = grid.coords(p);
                    ylm(l as usize, m, t, f).unwrap() * grid.pixel_weight(p / grid.nphi())
                })
                .collect()
        })
        .collect();
    let ys: Vec<Vec<Complex64>> = lm
        .iter()
        .map(|&(l, m)| {
            (0..grid.npix())
                .map(|p| {
                    let (t, f) = grid.coords(p);
                    ylm(l as usize, m, t, f).unwrap()
                })
                .collect()
        })
        .collect();
    let gaunt_err = (0..lm.len())
        .into_par_iter()
        .map(|i1| {
            let mut worst = 0.0f64;
            for i2 in 0..lm.len() {
                let prod: Vec<Complex64> = y[i1].iter().zip(&ys[i2]).map(|(a, b)| a * b).collect();
                for i3 in 0..lm.len() {
                    let cub: Complex64 = prod.iter().zip(&ys[i3]).map(|(a, b)| a * b).sum();
                    let (l1, m1) = lm[i1];
                    let (l2, m2) = lm[i2];
                    let (l3, m3) = lm[i3];
                    let g = gaunt(l1, m1, l2, m2, l3, m3);
                    worst = worst.max((cub - g).norm());
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);

    let lmax = 12;
    let cl = PowerSpectrum::flat(lmax, 1.0).unwrap();
    let a = gaussian(&cl, lmax, 909, 0);
    let triples: Vec<(usize, usize, usize)> = (2..=lmax)
        .flat_map(|l1| (l1..=lmax).flat_map(move |l2| (l2..=lmax).map(move |l3| (l1, l2, l3))))
        .filter(|&(l1, l2, l3)| (l1 + l2 + l3) % 2 == 0 && l3 <= l1 + l2)
        .collect();
    let base: Vec<f64> = triples
        .iter()
        .map(|&(l1, l2, l3)| bispectrum_i_hat(&a, l1, l2, l3).unwrap())
        .collect();
    let rot_err = (0..10u64)
        .into_par_iter()
        .map(|k| {
            let euler = (
                2.0 * PI * uniform(3 * k),
                PI * uniform(3 * k + 1),
                2.0 * PI * uniform(3 * k + 2),
            );
            let r = rotate_alm(&a, euler).unwrap();
            triples
                .iter()
                .zip(&base)
                .map(|(&(l1, l2, l3), b)| (bispectrum_i_hat(&r, l1, l2, l3).unwrap() - b).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);

    // Both orthogonality relations of the 3j symbols.
    let mut memo = BTreeMap::new();
    let mut wigner_3j = |l1, l2, l3, m1, m2, m3| *memo.entry((l1, l2, l3, m1, m2, m3)).or_insert_with(|| wigner_3j(l1, l2, l3, m1, m2, m3));
    let mut orth_err = 0.0f64;
    for l1 in 0..=6i64 {
        for l2 in 0..=6i64 {
            let (lo, hi) = ((l1 - l2).abs(), l1 + l2);
            for l3 in lo..=hi {
                for l3p in lo..=hi {
                    for m3 in -l3..=l3 {
                        for m3p in -l3p..=l3p {
                            let mut s = 0.0;
                            for m1 in -l1..=l1 {
                                for m2 in -l2..=l2 {
                                    s += wigner_3j(l1, l2, l3, m1, m2, m3) * wigner_3j(l1, l2, l3p, m1, m2, m3p);
                                }
                            }
                            let delta = if l3 == l3p && m3 == m3p { 1.0 } else { 0.0 };
                            orth_err = orth_err.max(((2 * l3 + 1) as f64 * s - delta).abs());
                        }
                    }
                }
            }
            for m1 in -l1..=l1 {
                for m2 in -l2..=l2 {
                    for m1p in -l1..=l1 {
                        for m2p in -l2..=l2 {
                            let mut s = 0.0;
                            for l3 in lo..=hi {
                                for m3 in -l3..=l3 {
                                    s += (2 * l3 + 1) as f64
                                        * wigner_3j(l1, l2, l3, m1, m2, m3)
                                        * wigner_3j(l1, l2, l3, m1p, m2p, m3);
                                }
                            }
                            let delta = if m1 == m1p && m2 == m2p { 1.0 } else { 0.0 };
                            orth_err = orth_err.max((s - delta).abs());
                        }
                    }
                }
            }
        }
    }
    outcome(
        gaunt_err < 1e-10 && rot_err < 1e-9 && orth_err < 1e-10,
        format!(
            "Gaunt vs cubature {gaunt_err:.1e} ({} triples), Î rotation {rot_err:.1e} ({} triples × 10), 3j orthogonality {orth_err:.1e}",
            lm.len().pow(3),
            triples.len()
        ),
    )
}

fn masked_covariance() -> Outcome {
    let (lmax, n) = (8usize, 5000);
    let mask = Mask::Band { b0: 0.3 };
    // Fields band-limited at the internal degree the covariance sums to.
    let cl = PowerSpectrum::power_law(2 * lmax, 1.0).unwrap();
    let cov = coupling_covariance(&mask, lmax, &cl).unwrap();
    let grid = build_grid(cov.grid_lmax).unwrap();
    let idx: Vec<(usize, i64)> = (0..=lmax).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m))).collect();
    let dim = idx.len();
    let samples: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = gaussian(&cl, 2 * lmax, 1010, i);
            let map = apply_mask(&synthesize(&a, &grid).unwrap(), &mask);
            let am = analyze_observed(&map, lmax).unwrap();
            idx.iter().map(|&(l, m)| am.get(l, m)).collect()
        })
        .collect();
    let mut z_max = 0.0f64;
    let mut exceed = 0usize;
    let mut tested = 0usize;
    let mut exact_err = 0.0f64;
    let mut z_of = BTreeMap::new();
    for i in 0..dim {
        for j in i..dim {
            let (l1, m1) = idx[i];
            let (l2, m2) = idx[j];
            let x: Vec<Complex64> = samples.iter().map(|s| s[i] * s[j].conj()).collect();
            let want = cov.get(l1, m1, l2, m2);
            for (part, w) in [(0, want.re), (1, want.im)] {
                let v: Vec<f64> = x.iter().map(|c| if part == 0 { c.re } else { c.im }).collect();
                let se = se_of_mean(&v);
                if se == 0.0 {
                    // Identically zero in every draw: must match exactly.
                    exact_err = exact_err.max((mean(&v) - w).abs());
                    continue;
                }
                let z = (mean(&v) - w) / se;
                tested += 1;
                z_max = z_max.max(z.abs());
                if z.abs() > 3.0 {
                    exceed += 1;
                }
                if part == 0 {
                    z_of.insert((i, j), mean(&v) / se);
                }
            }
        }
    }
    // Three-SE exceedances allowed at the rate chance produces over this many
    // comparisons, plus three binomial SDs.
    let p = 2.0 * (1.0 - normal_cdf(3.0));
    let allowed = tested as f64 * p + 3.0 * (tested as f64 * p * (1.0 - p)).sqrt();
    let (i, j) = (full_index(2, 0), full_index(4, 0));
    let coupling_z = z_of[&(i, j)];
    let coupling = cov.get(2, 0, 4, 0).re;
    let rho = coupling / (cov.get(2, 0, 2, 0).re * cov.get(4, 0, 4, 0).re).sqrt();
    let pass = (exceed as f64) <= allowed
        && z_max < 5.0
        && exact_err < 1e-12
        && coupling_z.abs() > 5.0
        && coupling_z.signum() == coupling.signum();
    outcome(
        pass,
        format!(
            "{exceed}/{tested} entries beyond 3 SE (allowed {allowed:.1}), max |z| {z_max:.2}; \
             corr(a_20, a_40) = {rho:+.3}, sample estimate {coupling_z:+.1} SE from zero"
        ),
    )
}

fn curvature_closed_form() -> Outcome {
    let mut alm = Alm::zeros(16);
    alm.set(1, 0, Complex64::new((4.0 * PI / 3.0).sqrt(), 0.0));
    let grid = build_grid(16).unwrap();
    let hs = grid_hessians(&alm, &grid).unwrap();
    let mut err = 0.0f64;
    let tau = DEFAULT_TAU * hs.iter().map(|(_, h)| h.eigs.0.abs().max(h.eigs.1.abs())).fold(0.0, f64::max);
    let mut counts = [0usize; 4];
    let mut expected = [0usize; 4];
    for (p, (_, h)) in hs.iter().enumerate() {
        let (theta, _) = grid.coords(p);
        let c = theta.cos();
        err = err.max((h.h[0][0] + c).abs()).max((h.h[1][1] + c).abs()).max(h.h[0][1].abs()).max(h.h[1][0].abs());
        counts[match classify_point(h, tau) {
            CurvatureClass::Hill => 0,
            CurvatureClass::Lake => 1,
            CurvatureClass::Saddle => 2,
            CurvatureClass::Degenerate => 3,
        }] += 1;
        // Hessian -cosθ·I: positive definite below the equator.
        let exact = if (theta - PI / 2.0).abs() < 1e-12 {
            3
        } else if theta > PI / 2.0 {
            0
        } else {
            1
        };
        expected[exact] += 1;
    }
    outcome(
        err < 1e-10 && counts == expected,
        format!(
            "max |H + cosθ·I| = {err:.1e}; hills/lakes/saddles/degenerate {:?}, exact partition {:?}",
            counts, expected
        ),
    )
}

/// Fourth-order central second difference of `f` at 0.
fn second_difference(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h)) / (12.0 * h * h)
}

fn derivative_oracle() -> Outcome {
    let lmax = 16;
    let cl = PowerSpectrum::power_law(lmax, 1.0).unwrap();
    let a = gaussian(&cl, lmax, 1212, 0);
    let eval = |v: [f64; 3]| {
        let (t, p) = spherical_coords(v);
        a.evaluate(t, p)
    };
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let theta = 0.2 + (PI - 0.4) * uniform(2 * k + 7000);
        let phi = 2.0 * PI * uniform(2 * k + 7001);
        let h = covariant_hessian(&field_derivatives(&a, theta, phi).unwrap(), theta).unwrap().h;
        let x = unit_vector(theta, phi);
        let (st, ct, sp, cp) = (theta.sin(), theta.cos(), phi.sin(), phi.cos());
        let e_t = [ct * cp, ct * sp, -st];
        let e_p = [-sp, cp, 0.0];
        // Second derivative of T along the great circle leaving x in direction u.
        let along = |u: [f64; 3]| {
            second_difference(
                |t| eval([0, 1, 2].map(|i| t.cos() * x[i] + t.sin() * u[i])),
                1e-3,
            )
        };
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let hpp = along(e_t);
        let hqq = along(e_p);
        let hpq = 0.5 * (along([0, 1, 2].map(|i| s * (e_t[i] + e_p[i]))) - along([0, 1, 2].map(|i| s * (e_t[i] - e_p[i]))));
        let scale = (h[0][0].powi(2) + 2.0 * h[0][1].powi(2) + h[1][1].powi(2)).sqrt();
        for (an, fd) in [(h[0][0], hpp), (h[0][1], hpq), (h[1][1], hqq)] {
            worst = worst.max((an - fd).abs() / scale);
        }
    }
    outcome(
        worst < 1e-5,
        format!("max |H - geodesic finite difference| / |H| over 100 points = {worst:.2e}"),
    )
}

fn smhw_identities() -> Outcome {
    let lmax = 32;
    let cl = PowerSpectrum::power_law(lmax, 1.0).unwrap();
    let a = gaussian(&cl, lmax, 1313, 0);
    let centers: Vec<(f64, f64)> = (0..20u64)
        .map(|k| ((1.0 - 2.0 * uniform(2 * k + 9000)).acos(), 2.0 * PI * uniform(2 * k + 9001)))
        .collect();
    let mut comp = 0.0f64;
    let mut norm = 0.0f64;
    let mut agree = 0.0f64;
    for r in DEFAULT_SCALES {
        let k = smhw_kernel(r, lmax).unwrap();
        let (m0, m2) = kernel_moments(&k, k.fine_lmax() + 1);
        comp = comp.max(m0.abs());
        norm = norm.max((m2 - 1.0).abs());
        let w = smhw_coefficients(&a, &k).unwrap();
        let harmonic: Vec<f64> = centers.iter().map(|&(t, p)| w.evaluate(t, p)).collect();
        let direct = smhw_direct(&a, &k, &centers).unwrap();
        let scale = harmonic.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (h, d) in harmonic.iter().zip(&direct) {
            agree = agree.max((h - d).abs() / scale);
        }
    }
    outcome(
        comp < 1e-8 && norm < 1e-8 && agree < 1e-8,
        format!("max |∫Ψ| = {comp:.1e}, max |∫Ψ² - 1| = {norm:.1e}, harmonic vs direct {agree:.1e} (5 scales × 20 centers)"),
    )
}

fn detection_power() -> Outcome {
    // fnl in the usual normalization times 1e-4 for unit-variance fields.
    let fnl = [0.0, 100e-4, 300e-4];
    let curve = |stat: &str| -> Vec<PowerPoint> {
        let c = ScenarioConfig::parse(
            &format!("lmax = 64\ncl = powerlaw:1\nn = 500\nseed = 1414\nlevel = 0.95\nscales = 0.1\nstatistic = {stat}\n"),
            None,
        )
        .unwrap();
        power_curve(&c, &fnl, &calibrate_null(&c).unwrap()).unwrap()
    };
    let j1 = curve("j1");
    let j2 = curve("j2");
    let sk = curve("smhw_skewness");
    let tol = |a: &PowerPoint, b: &PowerPoint| 2.0 * (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
    let mut pass = true;
    for i in 0..fnl.len() {
        if i > 0 {
            pass &= j1[i].fraction() >= j1[i - 1].fraction() - tol(&j1[i], &j1[i - 1]);
        }
        pass &= j1[i].fraction() >= j2[i].fraction() - tol(&j1[i], &j2[i]);
        pass &= j1[i].fraction() >= sk[i].fraction() - tol(&j1[i], &sk[i]);
    }
    let fmt = |c: &[PowerPoint]| c.iter().map(|p| format!("{:.3}", p.fraction())).collect::<Vec<_>>().join("/");
    outcome(
        pass,
        format!(
            "detection at fnl 0/100/300: J1 {}, J2 {}, SMHW skewness {} (SE ≈ {:.3})",
            fmt(&j1),
            fmt(&j2),
            fmt(&sk),
            j1[2].std_error()
        ),
    )
}

/// Run every CLI command in `dir` and return all produced bytes.
fn cli_outputs(dir: &Path, workers: &str) -> BTreeMap<String, Vec<u8>> {
    let _ = std::fs::remove_dir_all(dir);
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("scenario.cfg"), "lmax = 12\nstatistic = hausman\nnoise = 0.5,0.5\nn = 40\nseed = 5\n").unwrap();
    std::fs::write(dir.join("power.cfg"), "lmax = 12\nstatistic = j1\nn = 30\nseed = 6\n").unwrap();
    let runs: &[&[&str]] = &[
        &["simulate", "--lmax", "16", "--cl", "powerlaw:1", "--seed", "7", "--fnl", "0.05", "--out", "map.smap"],
        &["simulate", "--lmax", "16", "--cl", "powerlaw:1", "--seed", "7", "--mask-band", "0.2", "--out", "masked.smap"],
        &["simulate", "--lmax", "16", "--cl", "flat:1", "--seed", "8", "--noise", "flat:0.5", "--noise", "flat:0.5",
          "--format", "alm", "--out", "c1.alm", "--out", "c2.alm"],
        &["estimate-cl", "--in", "map.smap", "--out", "cl.csv"],
        &["estimate-cl", "--in", "masked.smap", "--out", "pseudo.csv"],
        &["auto-cross", "--in", "c1.alm", "--in", "c2.alm", "--noise", "flat:0.5", "--noise", "flat:0.5", "--out", "ac.csv"],
        &["hausman", "--in", "c1.alm", "--in", "c2.alm", "--noise", "flat:0.5", "--noise", "flat:0.5", "--out", "h.csv",
          "--brownian-out", "b.csv", "--reference-paths", "200"],
        &["needlet", "--in", "masked.smap", "--out", "n.csv", "--window-out", "w.csv"],
        &["bispectrum", "--in", "map.smap", "--out", "j1.csv", "--ordinates-out", "ord.csv", "--ordinates-lmax", "6"],
        &["bispectrum", "--in", "map.smap", "--mode", "j2", "--out", "j2.csv"],
        &["curvature", "--in", "masked.smap", "--band-sims", "30", "--out", "curv.csv"],
        &["smhw", "--in", "map.smap", "--scales", "0.2,0.4", "--band-sims", "30", "--out", "smhw.csv"],
        &["mc", "--config", "scenario.cfg", "--out", "mc.csv", "--values-out", "values.csv"],
        &["power-curve", "--config", "power.cfg", "--fnl", "0,0.1", "--out", "pc.csv"],
    ];
    let mut out = BTreeMap::new();
    for (i, args) in runs.iter().enumerate() {
        let o = Command::new(env!("CARGO_BIN_EXE_spherestats"))
            .args(*args)
            .args(["--workers", workers])
            .current_dir(dir)
            .output()
            .unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        out.insert(format!("stdout {i:02} {}", args[0]), o.stdout);
    }
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let root = std::env::temp_dir().join(format!("spherestats-acceptance-{}", std::process::id()));
    let dirs: Vec<(PathBuf, &str)> = vec![(root.join("a"), "1"), (root.join("b"), "1"), (root.join("c"), "4")];
    let outs: Vec<_> = dirs.iter().map(|(d, w)| cli_outputs(d, w)).collect();
    let _ = std::fs::remove_dir_all(&root);
    let files = outs[0].len();
    let cli_same = outs.iter().all(|o| o == &outs[0]);

    let c = ScenarioConfig::parse("lmax = 16\nstatistic = smhw_skewness\nscales = 0.2,0.4\nn = 40\nseed = 15\n", None).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&c).unwrap())
    };
    let r1 = run(1);
    let bits = |r: &spherestats::mc::EnsembleResult| -> Vec<u64> { r.values.iter().flatten().map(|v| v.to_bits()).collect() };
    let mc_same = bits(&r1) == bits(&run(1)) && bits(&r1) == bits(&run(4));
    outcome(
        cli_same && mc_same,
        format!(
            "{files} CLI outputs identical across runs and worker counts 1/1/4: {cli_same}; MC ensemble bitwise: {mc_same}"
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 15] = [
        (1, "chi-squared law of the sample spectrum", chi_squared_law),
        (2, "unbiasedness and variance of the sample spectrum", unbiased_spectrum),
        (3, "auto/cross variance gap", auto_cross_gap),
        (4, "Hausman statistic under the null", hausman_null),
        (5, "Hausman divergence rate under misspecified noise", hausman_rate),
        (6, "needlet partition of unity", needlet_partition),
        (7, "needlet reconstruction", needlet_reconstruction),
        (8, "needlet band power unbiasedness", needlet_unbiased),
        (9, "Gaunt, 3j and bispectrum rotation algebra", gaunt_and_3j),
        (10, "masked coefficient covariance", masked_covariance),
        (11, "curvature closed form", curvature_closed_form),
        (12, "covariant Hessian derivative oracle", derivative_oracle),
        (13, "Mexican hat wavelet identities", smhw_identities),
        (14, "detection-power ordering", detection_power),
        (15, "determinism", determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {id:>2} {name}: {} [{:.1}s]", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
