//! Seeded Monte Carlo ensembles, quantile bands and detection-power curves.
//!
//! A scenario is a flat `key = value` text file. Blank lines and `#`
//! comments are ignored; unknown keys are errors. Keys and defaults:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `lmax` | 32 | band limit of the simulated fields |
//! | `cl` | `powerlaw:1` | `flat:<c>`, `powerlaw:<slope>` (unit variance) or `file:<path>` |
//! | `fnl` | 0 | quadratic non-Gaussianity amplitude |
//! | `noise` | none | comma-separated flat noise levels, one per channel |
//! | `declared_noise_scale` | 1 | declared noise = true noise × this factor |
//! | `mask` | `none` | `none` or `band:<b0 radians>` |
//! | `statistic` | `cl` | see [`Statistic`] |
//! | `bandwidth` | 2 | needlet `B` |
//! | `big_l` | statistic-dependent | `L` of the Brownian and integrated-bispectrum series |
//! | `k` | 4 | number of squeezed degrees in `J1` |
//! | `base` | 2 | first squeezed degree in `J1` |
//! | `scales` | `0.05,0.1,0.2,0.4,0.8` | wavelet scales |
//! | `nu` | `-3,-2.5,...,3` | curvature thresholds |
//! | `tau` | 1e-9 | relative curvature tolerance |
//! | `n` | 100 | number of realizations |
//! | `seed` | 1 | base seed |
//! | `level` | 0.68 | band coverage |
//! | `point` | last | grid index used for detection decisions |
//!
//! Realization `i` uses the seed `splitmix64(seed ^ i·0x9E3779B97F4A7C15)`,
//! so adding realizations never changes earlier ones. Single-field statistics
//! use the first channel when channels are configured, the signal otherwise.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bispectrum::{integrated_j1, integrated_j2, BispectrumTables};
use crate::curvature::{curvature_densities, default_nu_grid, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::field::{add_noise_channels, sample_gaussian_alm_stream, FnlTransform, PowerSpectrum};
use crate::grid::{analyze_observed, build_grid, synthesize, Alm, Mask, SphereGrid, SphereMap};
use crate::io::{parse_spectrum, read_text};
use crate::needlets::{needlet_power, needlet_power_masked, NeedletFrame};
use crate::smhw::{smhw_kernel, smhw_moments, smhw_transform, SmhwKernel, DEFAULT_SCALES};
use crate::spectra::{auto_power_with, brownian_functional, cross_power, estimate_cl, hausman_statistic, L_MIN};
use crate::stats::{mean, quantile_sorted, variance};

/// Minimum ensemble size for quantile bands.
pub const MIN_BAND_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    /// `Ĉ_l`, `l = 2..=lmax` (pseudo-spectrum under a mask).
    Cl,
    /// Auto-power spectrum with the declared noise.
    Auto,
    /// Cross-power spectrum.
    Cross,
    /// `H_l`, `l = 2..=lmax`.
    Hausman,
    /// `B_L(r)` on `r = k/L`.
    Brownian,
    /// `Γ̂_j` for every needlet scale.
    Needlet,
    /// `J1_L(r)`.
    J1,
    /// `J2_L(r)`.
    J2,
    /// Wavelet coefficient skewness per scale.
    SmhwSkewness,
    /// Wavelet coefficient excess kurtosis per scale.
    SmhwKurtosis,
    /// Hill density `h(ν)`.
    Hills,
    /// Lake density `l(ν)`.
    Lakes,
}

impl Statistic {
    pub const ALL: [(&'static str, Statistic); 12] = [
        ("cl", Statistic::Cl),
        ("auto", Statistic::Auto),
        ("cross", Statistic::Cross),
        ("hausman", Statistic::Hausman),
        ("brownian", Statistic::Brownian),
        ("needlet", Statistic::Needlet),
        ("j1", Statistic::J1),
        ("j2", Statistic::J2),
        ("smhw_skewness", Statistic::SmhwSkewness),
        ("smhw_kurtosis", Statistic::SmhwKurtosis),
        ("hills", Statistic::Hills),
        ("lakes", Statistic::Lakes),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, s)| *s == self).map(|(n, _)| *n).unwrap_or("?")
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().find(|(n, _)| *n == s).map(|(_, v)| *v)
    }

    /// Name of the grid variable in CSV output.
    pub fn grid_label(self) -> &'static str {
        match self {
            Statistic::Cl | Statistic::Auto | Statistic::Cross | Statistic::Hausman => "l",
            Statistic::Brownian | Statistic::J1 | Statistic::J2 => "r",
            Statistic::Needlet => "j",
            Statistic::SmhwSkewness | Statistic::SmhwKurtosis => "R",
            Statistic::Hills | Statistic::Lakes => "nu",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub lmax: usize,
    pub cl: PowerSpectrum,
    /// The `cl` value as written, echoed into manifests.
    pub cl_source: String,
    pub fnl: f64,
    pub noise: Vec<f64>,
    pub declared_noise_scale: f64,
    pub mask: Option<Mask>,
    pub statistic: Statistic,
    pub bandwidth: f64,
    pub big_l: Option<usize>,
    pub k: usize,
    pub base: usize,
    pub scales: Vec<f64>,
    pub nu: Vec<f64>,
    pub tau: f64,
    pub n: usize,
    pub seed: u64,
    pub level: f64,
    pub point: Option<usize>,
}

/// Resolve a spectrum source: `flat:<c>`, `powerlaw:<slope>`, `file:<path>`
/// or a bare path to a `CL v1` file. Relative paths resolve against
/// `base_dir`; file spectra are truncated to `lmax`.
pub fn spectrum_source(spec: &str, lmax: usize, base_dir: Option<&Path>) -> Result<PowerSpectrum> {
    let bad = || Error::InvalidParameter(format!("cannot understand spectrum '{spec}'"));
    let (kind, arg) = spec.split_once(':').unwrap_or(("file", spec));
    match kind {
        "flat" => PowerSpectrum::flat(lmax, arg.parse().map_err(|_| bad())?),
        "powerlaw" => PowerSpectrum::power_law(lmax, arg.parse().map_err(|_| bad())?),
        "file" => {
            let p = Path::new(arg);
            let path = match base_dir {
                Some(d) if p.is_relative() => d.join(p),
                _ => p.to_path_buf(),
            };
            let cl = parse_spectrum(&read_text(&path)?)?;
            if cl.lmax() < lmax {
                return Err(Error::InvalidParameter(format!(
                    "spectrum '{}' stops at l = {} < {lmax}",
                    path.display(),
                    cl.lmax()
                )));
            }
            Ok(cl.truncated(lmax))
        }
        _ => Err(bad()),
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, ()> {
    s.split(',').map(|v| v.trim().parse().map_err(|_| ())).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            lmax: 32,
            cl: PowerSpectrum::power_law(32, 1.0).expect("valid default spectrum"),
            cl_source: "powerlaw:1".into(),
            fnl: 0.0,
            noise: Vec::new(),
            declared_noise_scale: 1.0,
            mask: None,
            statistic: Statistic::Cl,
            bandwidth: 2.0,
            big_l: None,
            k: 4,
            base: 2,
            scales: DEFAULT_SCALES.to_vec(),
            nu: default_nu_grid(),
            tau: DEFAULT_TAU,
            n: 100,
            seed: 1,
            level: 0.68,
            point: None,
        }
    }
}

impl ScenarioConfig {
    /// Parse a scenario; `file:` spectra resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            let num_err = || err(format!("bad value '{value}' for '{key}'"));
            match key {
                "lmax" => c.lmax = value.parse().map_err(|_| num_err())?,
                "cl" => c.cl_source = value.to_string(),
                "fnl" => c.fnl = value.parse().map_err(|_| num_err())?,
                "noise" => {
                    c.noise = if value == "none" {
                        Vec::new()
                    } else {
                        parse_list(value).map_err(|_| num_err())?
                    }
                }
                "declared_noise_scale" => {
                    c.declared_noise_scale = value.parse().map_err(|_| num_err())?
                }
                "mask" => {
                    c.mask = match value.split_once(':') {
                        None if value == "none" => None,
                        Some(("band", b)) => Some(Mask::Band {
                            b0: b.parse().map_err(|_| num_err())?,
                        }),
                        _ => return Err(num_err()),
                    }
                }
                "statistic" => {
                    c.statistic = Statistic::parse(value).ok_or_else(|| {
                        let names: Vec<&str> = Statistic::ALL.iter().map(|s| s.0).collect();
                        err(format!("unknown statistic '{value}'; one of {}", names.join(", ")))
                    })?
                }
                "bandwidth" => c.bandwidth = value.parse().map_err(|_| num_err())?,
                "big_l" => c.big_l = Some(value.parse().map_err(|_| num_err())?),
                "k" => c.k = value.parse().map_err(|_| num_err())?,
                "base" => c.base = value.parse().map_err(|_| num_err())?,
                "scales" => c.scales = parse_list(value).map_err(|_| num_err())?,
                "nu" => c.nu = parse_list(value).map_err(|_| num_err())?,
                "tau" => c.tau = value.parse().map_err(|_| num_err())?,
                "n" => c.n = value.parse().map_err(|_| num_err())?,
                "seed" => c.seed = value.parse().map_err(|_| num_err())?,
                "level" => c.level = value.parse().map_err(|_| num_err())?,
                "point" => c.point = Some(value.parse().map_err(|_| num_err())?),
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        c.cl = spectrum_source(&c.cl_source, c.lmax, base_dir)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.lmax < L_MIN {
            return bad(format!("lmax must be at least {L_MIN}"));
        }
        if self.cl.lmax() < self.lmax {
            return bad(format!("spectrum stops at l = {} < lmax", self.cl.lmax()));
        }
        if self.n < 2 {
            return bad("an ensemble needs n >= 2".into());
        }
        if !(0.0..=1.0).contains(&self.level) {
            return bad(format!("level {} outside [0, 1]", self.level));
        }
        if self.noise.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise levels must be finite and non-negative".into());
        }
        let multi = matches!(self.statistic, Statistic::Cross | Statistic::Hausman | Statistic::Brownian);
        if multi && self.noise.len() < 2 {
            return bad(format!("statistic '{}' needs at least two noise channels", self.statistic.name()));
        }
        if self.statistic == Statistic::Auto && self.noise.is_empty() {
            return bad("statistic 'auto' needs noise channels".into());
        }
        if self.scales.iter().any(|r| !(*r > 0.0)) {
            return bad("wavelet scales must be positive".into());
        }
        Ok(())
    }

    /// `L` for the series statistics.
    pub fn effective_big_l(&self) -> usize {
        match (self.big_l, self.statistic) {
            (Some(l), _) => l,
            (None, Statistic::Brownian) => self.lmax + 1 - L_MIN,
            (None, _) => self.lmax,
        }
    }

    /// Canonical `key = value` form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lmax = {}", self.lmax);
        let _ = writeln!(s, "cl = {}", self.cl_source);
        let _ = writeln!(s, "fnl = {}", self.fnl);
        let _ = writeln!(
            s,
            "noise = {}",
            if self.noise.is_empty() { "none".into() } else { fmt_list(&self.noise) }
        );
        let _ = writeln!(s, "declared_noise_scale = {}", self.declared_noise_scale);
        let _ = writeln!(
            s,
            "mask = {}",
            match &self.mask {
                Some(Mask::Band { b0 }) => format!("band:{b0}"),
                _ => "none".into(),
            }
        );
        let _ = writeln!(s, "statistic = {}", self.statistic.name());
        let _ = writeln!(s, "bandwidth = {}", self.bandwidth);
        if let Some(l) = self.big_l {
            let _ = writeln!(s, "big_l = {l}");
        }
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "base = {}", self.base);
        let _ = writeln!(s, "scales = {}", fmt_list(&self.scales));
        let _ = writeln!(s, "nu = {}", fmt_list(&self.nu));
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "level = {}", self.level);
        if let Some(p) = self.point {
            let _ = writeln!(s, "point = {p}");
        }
        s
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of realization `index`.
pub fn sim_seed(base: u64, index: usize) -> u64 {
    splitmix64(base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Everything shared by the realizations of one ensemble.
struct Context {
    grid: Arc<SphereGrid>,
    fnl: Option<FnlTransform>,
    observed: Option<Vec<bool>>,
    tables: Option<BispectrumTables>,
    frame: Option<NeedletFrame>,
    kernels: Vec<SmhwKernel>,
    noise: Vec<PowerSpectrum>,
    declared: Vec<PowerSpectrum>,
}

impl Context {
    fn new(c: &ScenarioConfig) -> Result<Self> {
        let grid = build_grid(c.lmax)?;
        let big_l = c.effective_big_l();
        let tables = match c.statistic {
            Statistic::J1 => Some(BispectrumTables::for_j1(big_l, c.base, c.k)),
            Statistic::J2 => Some(BispectrumTables::for_j2(big_l)),
            _ => None,
        };
        let frame = match c.statistic {
            Statistic::Needlet => Some(NeedletFrame::new(c.bandwidth, c.lmax)?),
            _ => None,
        };
        let kernels = match c.statistic {
            Statistic::SmhwSkewness | Statistic::SmhwKurtosis => c
                .scales
                .iter()
                .map(|&r| smhw_kernel(r, c.lmax))
                .collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        let noise: Vec<PowerSpectrum> = c
            .noise
            .iter()
            .map(|&v| PowerSpectrum::new(vec![v; c.lmax + 1]))
            .collect::<Result<_>>()?;
        let declared = noise.iter().map(|n| n.scaled(c.declared_noise_scale)).collect();
        Ok(Self {
            fnl: (c.fnl != 0.0).then(|| FnlTransform::new(c.lmax)).transpose()?,
            observed: c.mask.as_ref().map(|m| m.observed(&grid)),
            grid,
            tables,
            frame,
            kernels,
            noise,
            declared,
        })
    }

    fn masked_map(&self, alm: &Alm) -> Result<SphereMap> {
        let map = synthesize(alm, &self.grid)?;
        match &self.observed {
            Some(o) => SphereMap::with_mask(self.grid.clone(), map.values().to_vec(), o.clone()),
            None => Ok(map),
        }
    }

    /// Coefficients of the observed sky.
    fn observed_alm(&self, alm: &Alm) -> Result<Alm> {
        match &self.observed {
            Some(_) => analyze_observed(&self.masked_map(alm)?, alm.lmax()),
            None => Ok(alm.clone()),
        }
    }
}

/// Grid values of the configured statistic.
pub fn statistic_grid(c: &ScenarioConfig) -> Result<Vec<f64>> {
    let big_l = c.effective_big_l();
    Ok(match c.statistic {
        Statistic::Cl | Statistic::Auto | Statistic::Cross | Statistic::Hausman => {
            (L_MIN..=c.lmax).map(|l| l as f64).collect()
        }
        Statistic::Brownian | Statistic::J1 | Statistic::J2 => {
            (0..=big_l).map(|k| k as f64 / big_l as f64).collect()
        }
        Statistic::Needlet => {
            let frame = NeedletFrame::new(c.bandwidth, c.lmax)?;
            (0..=frame.j_max()).map(|j| j as f64).collect()
        }
        Statistic::SmhwSkewness | Statistic::SmhwKurtosis => c.scales.clone(),
        Statistic::Hills | Statistic::Lakes => c.nu.clone(),
    })
}

fn one_realization(c: &ScenarioConfig, ctx: &Context, index: usize) -> Result<Vec<f64>> {
    let seed = sim_seed(c.seed, index);
    let gauss = sample_gaussian_alm_stream(&c.cl, c.lmax, seed, 0);
    let signal = match &ctx.fnl {
        Some(t) => t.apply(&gauss, &c.cl, c.fnl)?,
        None => gauss,
    };
    let channels = if ctx.noise.is_empty() {
        None
    } else {
        Some(add_noise_channels(&signal, &ctx.noise, seed)?)
    };
    let field = channels.as_ref().map_or(&signal, |ch| &ch.alms()[0]);
    let big_l = c.effective_big_l();
    Ok(match c.statistic {
        Statistic::Cl => estimate_cl(&ctx.observed_alm(field)?).chat[L_MIN..].to_vec(),
        Statistic::Auto => {
            let ch = channels.as_ref().expect("validated");
            auto_power_with(ch, &ctx.declared)?.chat[L_MIN..].to_vec()
        }
        Statistic::Cross => cross_power(channels.as_ref().expect("validated"))?.chat[L_MIN..].to_vec(),
        Statistic::Hausman => hausman_statistic(channels.as_ref().expect("validated"), &ctx.declared)?.h,
        Statistic::Brownian => {
            let h = hausman_statistic(channels.as_ref().expect("validated"), &ctx.declared)?.h;
            brownian_functional(&h, big_l)?.b
        }
        Statistic::Needlet => {
            let frame = ctx.frame.as_ref().expect("built for needlets");
            (0..=frame.j_max())
                .map(|j| match &ctx.observed {
                    Some(_) => needlet_power_masked(&ctx.masked_map(field)?, frame, j, None),
                    None => needlet_power(field, frame, j, None),
                })
                .map(|p| p.map(|p| p.gamma_hat))
                .collect::<Result<_>>()?
        }
        Statistic::J1 => {
            integrated_j1(&ctx.observed_alm(field)?, big_l, c.k, c.base, ctx.tables.as_ref())?.series
        }
        Statistic::J2 => integrated_j2(&ctx.observed_alm(field)?, big_l, ctx.tables.as_ref())?.series,
        Statistic::SmhwSkewness | Statistic::SmhwKurtosis => {
            let a = ctx.observed_alm(field)?;
            ctx.kernels
                .iter()
                .map(|k| {
                    let w = smhw_transform(&a, k, &ctx.grid)?;
                    let (s, kurt) = smhw_moments(&w, ctx.observed.as_deref())?;
                    Ok(if c.statistic == Statistic::SmhwSkewness { s } else { kurt })
                })
                .collect::<Result<_>>()?
        }
        Statistic::Hills | Statistic::Lakes => {
            let d = curvature_densities(field, &ctx.grid, ctx.observed.as_deref(), &c.nu, c.tau)?;
            let v = if c.statistic == Statistic::Hills { d.h } else { d.l };
            v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()
        }
    })
}

/// Per-realization curves and pointwise summaries over finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub statistic: Statistic,
    pub grid: Vec<f64>,
    /// `values[i]` is realization `i`'s curve; undefined points are NaN.
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl EnsembleResult {
    /// Finite values at grid point `k`, in realization order.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).filter(|x| x.is_finite()).collect()
    }
}

fn summarize(statistic: Statistic, grid: Vec<f64>, values: Vec<Vec<f64>>) -> EnsembleResult {
    let npts = grid.len();
    let col = |k: usize| -> Vec<f64> { values.iter().map(|v| v[k]).filter(|x| x.is_finite()).collect() };
    let (mut m, mut v) = (Vec::with_capacity(npts), Vec::with_capacity(npts));
    for k in 0..npts {
        let c = col(k);
        m.push(if c.is_empty() { f64::NAN } else { mean(&c) });
        v.push(if c.len() < 2 { f64::NAN } else { variance(&c) });
    }
    EnsembleResult {
        statistic,
        grid,
        values,
        mean: m,
        variance: v,
    }
}

/// Run `config.n` realizations and summarize them pointwise.
pub fn run_ensemble(config: &ScenarioConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let ctx = Context::new(config)?;
    let grid = statistic_grid(config)?;
    let values: Vec<Vec<f64>> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            one_realization(config, &ctx, i).map_err(|e| Error::Simulation {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    if let Some(bad) = values.iter().position(|v| v.len() != grid.len()) {
        return Err(Error::Simulation {
            index: bad,
            source: Box::new(Error::Domain(format!(
                "statistic returned {} values for a grid of {}",
                values[bad].len(),
                grid.len()
            ))),
        });
    }
    Ok(summarize(config.statistic, grid, values))
}

/// Pointwise quantile bands at coverage `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub level: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub median: Vec<f64>,
}

impl Bands {
    /// Whether `x` leaves the band at grid point `k`.
    pub fn exits(&self, k: usize, x: f64) -> bool {
        x < self.lo[k] || x > self.hi[k]
    }
}

/// Symmetric empirical bands `[(1-level)/2, 1-(1-level)/2]` per grid point.
pub fn calibrate_bands(result: &EnsembleResult, level: f64) -> Result<Bands> {
    bands_from_values(&result.values, level)
}

/// Bands over curves `values[i][k]`; non-finite entries are skipped.
pub fn bands_from_values(values: &[Vec<f64>], level: f64) -> Result<Bands> {
    let b = sparse_bands(values, level)?;
    let npts = values.first().map_or(0, Vec::len);
    for k in 0..npts {
        let got = values.iter().filter(|v| v[k].is_finite()).count();
        if got < MIN_BAND_SAMPLES {
            return Err(Error::InsufficientSamples {
                needed: MIN_BAND_SAMPLES,
                got,
            });
        }
    }
    Ok(b)
}

/// As [`bands_from_values`], but points with fewer than
/// [`MIN_BAND_SAMPLES`] finite values get NaN bands instead of an error.
pub fn sparse_bands(values: &[Vec<f64>], level: f64) -> Result<Bands> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidParameter(format!("level {level} outside [0, 1]")));
    }
    let npts = values.first().map_or(0, Vec::len);
    let q = 0.5 * (1.0 - level);
    let mut b = Bands {
        level,
        lo: Vec::new(),
        hi: Vec::new(),
        median: Vec::new(),
    };
    for k in 0..npts {
        let mut c: Vec<f64> = values.iter().map(|v| v[k]).filter(|x| x.is_finite()).collect();
        if c.len() < MIN_BAND_SAMPLES {
            b.lo.push(f64::NAN);
            b.hi.push(f64::NAN);
            b.median.push(f64::NAN);
            continue;
        }
        c.sort_by(f64::total_cmp);
        b.lo.push(quantile_sorted(&c, q));
        b.hi.push(quantile_sorted(&c, 1.0 - q));
        b.median.push(quantile_sorted(&c, 0.5));
    }
    Ok(b)
}

/// Detection fraction at one non-Gaussianity amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub fnl: f64,
    pub detected: usize,
    pub n: usize,
}

impl PowerPoint {
    pub fn fraction(&self) -> f64 {
        self.detected as f64 / self.n as f64
    }

    /// Binomial standard error of the fraction.
    pub fn std_error(&self) -> f64 {
        let p = self.fraction();
        (p * (1.0 - p) / self.n as f64).sqrt()
    }
}

/// Grid index used for detection decisions.
pub fn detection_point(config: &ScenarioConfig, grid_len: usize) -> Result<usize> {
    let k = config.point.unwrap_or(grid_len.saturating_sub(1));
    if k >= grid_len {
        return Err(Error::InvalidParameter(format!(
            "point {k} outside a grid of {grid_len} values"
        )));
    }
    Ok(k)
}

/// Null ensemble at `fnl = 0` on seeds disjoint from the detection runs.
pub fn calibrate_null(config: &ScenarioConfig) -> Result<Bands> {
    let mut null = config.clone();
    null.fnl = 0.0;
    null.seed = splitmix64(config.seed ^ 0x6E75_6C6C);
    calibrate_bands(&run_ensemble(&null)?, config.level)
}

/// Fraction of realizations whose statistic leaves `null` at the detection
/// point, for each amplitude in `fnl_grid`.
pub fn power_curve(config: &ScenarioConfig, fnl_grid: &[f64], null: &Bands) -> Result<Vec<PowerPoint>> {
    let grid_len = statistic_grid(config)?.len();
    if null.lo.len() != grid_len {
        return Err(Error::InvalidParameter(format!(
            "null bands have {} points, statistic grid has {grid_len}",
            null.lo.len()
        )));
    }
    let k = detection_point(config, grid_len)?;
    fnl_grid
        .iter()
        .map(|&fnl| {
            let mut c = config.clone();
            c.fnl = fnl;
            let r = run_ensemble(&c)?;
            let col: Vec<f64> = r.values.iter().map(|v| v[k]).collect();
            Ok(PowerPoint {
                fnl,
                detected: col.iter().filter(|&&x| x.is_finite() && null.exits(k, x)).count(),
                n: col.len(),
            })
        })
        .collect()
}

/// Reference draws of `(sup |B|, ∫ B²)` for the discretized Brownian path
/// `B(k/L) = L^{-1/2} Σ_{i<=k} Z_i`, one pair per path.
pub fn brownian_reference(big_l: usize, paths: usize, seed: u64) -> Vec<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha20Rng::seed_from_u64(sim_seed(seed, i));
            let z: Vec<f64> = (0..big_l).map(|_| rng.sample(StandardNormal)).collect();
            let f = brownian_functional(&z, big_l).expect("valid path length");
            (f.ks, f.cvm)
        })
        .collect()
}

/// Upper-tail Monte Carlo p-value `(1 + #{ref >= x}) / (1 + n)`.
pub fn mc_p_value(reference: &[f64], x: f64) -> f64 {
    let above = reference.iter().filter(|&&r| r >= x).count();
    (1 + above) as f64 / (1 + reference.len()) as f64
}

/// Evaluate `f` on `n` Gaussian realizations of `cl`, in realization order.
pub fn gaussian_reference<T: Send>(
    cl: &PowerSpectrum,
    lmax: usize,
    n: usize,
    seed: u64,
    f: impl Fn(&Alm) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let a = sample_gaussian_alm_stream(cl, lmax, sim_seed(seed, i), 0);
            f(&a).map_err(|e| Error::Simulation {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Line-oriented run manifest: `key = value`, one per line, config echoed
/// under `config.` keys.
pub fn manifest(command: &str, config_text: &str, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "tool = spherestats");
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "command = {command}");
    for (k, v) in extra {
        let _ = writeln!(s, "{k} = {v}");
    }
    for line in config_text.lines().filter(|l| !l.trim().is_empty()) {
        let _ = writeln!(s, "config.{}", line.trim());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(stat: &str, extra: &str) -> ScenarioConfig {
        ScenarioConfig::parse(&format!("lmax = 8\ncl = flat:1\nn = 40\nseed = 3\nstatistic = {stat}\n{extra}"), None)
            .unwrap()
    }

    #[test]
    fn config_roundtrip_and_errors() {
        let c = small("hausman", "noise = 0.5,0.5\nmask = band:0.2\nbig_l = 5");
        let again = ScenarioConfig::parse(&c.to_text(), None).unwrap();
        assert_eq!(again, c);
        assert!(ScenarioConfig::parse("lmax = x", None).is_err());
        assert!(ScenarioConfig::parse("colour = red", None).is_err());
        assert!(ScenarioConfig::parse("statistic = hausman", None).is_err());
        let e = ScenarioConfig::parse("lmax = 8\n\nbogus", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn ensembles_are_reproducible() {
        let c = small("cl", "");
        let a = run_ensemble(&c).unwrap();
        let b = run_ensemble(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grid.len(), 7);
        assert_ne!(a.values[0], a.values[1]);
        // Adding realizations keeps the earlier ones.
        let mut more = c.clone();
        more.n = 45;
        assert_eq!(run_ensemble(&more).unwrap().values[..40], a.values[..]);
    }

    #[test]
    fn two_sims_average() {
        let mut c = small("cl", "");
        c.n = 2;
        let r = run_ensemble(&c).unwrap();
        for k in 0..r.grid.len() {
            assert!((r.mean[k] - 0.5 * (r.values[0][k] + r.values[1][k])).abs() < 1e-15);
        }
    }

    #[test]
    fn bands_and_levels() {
        let r = run_ensemble(&small("cl", "")).unwrap();
        let b0 = calibrate_bands(&r, 0.0).unwrap();
        assert_eq!(b0.lo, b0.median);
        assert_eq!(b0.hi, b0.median);
        let b = calibrate_bands(&r, 0.9).unwrap();
        assert!(b.lo.iter().zip(&b.hi).all(|(l, h)| l <= h));
        let mut few = r.clone();
        few.values.truncate(10);
        assert!(calibrate_bands(&few, 0.68).is_err());
    }

    #[test]
    fn every_statistic_runs() {
        for (name, _) in Statistic::ALL {
            let extra = match name {
                "auto" | "cross" | "hausman" | "brownian" => "noise = 0.3,0.3",
                "smhw_skewness" | "smhw_kurtosis" => "scales = 0.3,0.6",
                _ => "",
            };
            let mut c = small(name, extra);
            c.n = 3;
            let r = run_ensemble(&c).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(r.values.len(), 3);
            assert_eq!(r.grid, statistic_grid(&c).unwrap());
        }
    }

    #[test]
    fn brownian_reference_is_seeded() {
        let a = brownian_reference(16, 50, 9);
        assert_eq!(a, brownian_reference(16, 50, 9));
        assert!(a.iter().all(|(ks, cvm)| *ks >= 0.0 && *cvm >= 0.0));
        assert_eq!(mc_p_value(&[1.0, 2.0, 3.0], 2.5), 0.5);
    }
}
