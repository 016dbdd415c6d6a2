//! `spherestats` command-line interface.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 when reading input or the
//! computation fails. Every output file is written atomically.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spherestats::bispectrum::{all_ordinates, integrated_j1, integrated_j2};
use spherestats::curvature::{curvature_densities, default_nu_grid, mean_densities, DensityCurve, DEFAULT_TAU};
use spherestats::field::{add_noise_channels, sample_gaussian_alm_stream, ChannelSet, FnlTransform, PowerSpectrum};
use spherestats::io::{format_alm, format_csv, format_map, parse_alm, parse_map, read_text, write_atomic};
use spherestats::mc::{
    bands_from_values, brownian_reference, sparse_bands, calibrate_null, gaussian_reference, manifest, mc_p_value, power_curve,
    run_ensemble, spectrum_source, ScenarioConfig,
};
use spherestats::needlets::{build_window, needlet_power, needlet_power_masked, NeedletFrame};
use spherestats::smhw::{smhw_kernel, smhw_moments, smhw_transform, DEFAULT_SCALES};
use spherestats::spectra::{auto_power_with, brownian_functional, cross_power, estimate_cl, hausman_statistic, L_MIN};
use spherestats::{analyze_observed, build_grid, synthesize, Alm, Error, Mask, SphereMap};

#[derive(Parser)]
#[command(name = "spherestats", version, about = "Statistics for isotropic random fields on the sphere")]
struct Cli {
    /// Worker threads [default: $SPHERESTATS_WORKERS, else all cores]
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a Gaussian or fNL field, optionally with noisy channels.
    Simulate(SimulateArgs),
    /// Estimate the angular power spectrum of a map.
    EstimateCl(EstimateArgs),
    /// Auto- and cross-power spectra of several channel maps.
    AutoCross(ChannelArgs),
    /// Hausman noise-misspecification test and its Brownian functional.
    Hausman(HausmanArgs),
    /// Needlet band powers.
    Needlet(NeedletArgs),
    /// Integrated bispectrum series and ordinate dump.
    Bispectrum(BispectrumArgs),
    /// Hill and lake densities of excursion sets.
    Curvature(CurvatureArgs),
    /// Mexican hat wavelet skewness and kurtosis.
    Smhw(SmhwArgs),
    /// Run a Monte Carlo ensemble from a scenario file.
    Mc(McArgs),
    /// Detection fraction against a Gaussian null, per fnl.
    PowerCurve(PowerCurveArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Band limit
    #[arg(long)]
    lmax: usize,
    /// Signal spectrum: CL v1 file, flat:<c> or powerlaw:<slope>
    #[arg(long, value_name = "SPEC")]
    cl: String,
    /// Base seed
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Quadratic non-Gaussianity amplitude
    #[arg(long, default_value_t = 0.0)]
    fnl: f64,
    /// Noise spectrum per channel (repeatable); one --out per channel
    #[arg(long, value_name = "SPEC")]
    noise: Vec<String>,
    /// Equatorial band mask half-width in radians
    #[arg(long, value_name = "RAD")]
    mask_band: Option<f64>,
    /// Output format
    #[arg(long, value_enum, default_value_t = Format::Map)]
    format: Format,
    /// Output file(s)
    #[arg(long, required = true)]
    out: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// SMAP v1 pixel map
    Map,
    /// ALM v1 coefficients
    Alm,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input SMAP v1 or ALM v1 file
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output CSV "l,chat"
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChannelArgs {
    /// Channel files, at least two (repeatable)
    #[arg(long = "in", value_name = "FILE", required = true)]
    inputs: Vec<PathBuf>,
    /// Declared noise spectrum per channel (repeatable)
    #[arg(long, value_name = "SPEC", required = true)]
    noise: Vec<String>,
    /// Output CSV "l,auto,cross"
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HausmanArgs {
    #[command(flatten)]
    channels: ChannelArgs,
    /// Brownian functional length L [default: lmax - 1]
    #[arg(long)]
    big_l: Option<usize>,
    /// Output CSV "r,B_L" with a final "KS=…,CvM=…" line
    #[arg(long, value_name = "FILE")]
    brownian_out: Option<PathBuf>,
    /// Reference Brownian paths for the reported p-values
    #[arg(long, default_value_t = 2000)]
    reference_paths: usize,
    /// Seed of the reference paths
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct NeedletArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Needlet bandwidth B > 1
    #[arg(long, default_value_t = 2.0)]
    bandwidth: f64,
    /// Spectrum for the expected band powers [default: sample spectrum]
    #[arg(long, value_name = "SPEC")]
    cl: Option<String>,
    /// Output CSV "j,Gamma_hat,Gamma_expected"
    #[arg(long)]
    out: PathBuf,
    /// Window table "xi,b"
    #[arg(long, value_name = "FILE")]
    window_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// Squeezed configurations
    J1,
    /// Equilateral configurations
    J2,
}

#[derive(Args)]
struct BispectrumArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::J1)]
    mode: Mode,
    /// Largest degree L [default: lmax]
    #[arg(long)]
    big_l: Option<usize>,
    /// Number of squeezed degrees
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// First squeezed degree
    #[arg(long, default_value_t = 2)]
    base: usize,
    /// Output CSV "r,J1" or "r,J2"
    #[arg(long)]
    out: PathBuf,
    /// Ordinate dump "l1,l2,l3,I,Ihat"
    #[arg(long, value_name = "FILE")]
    ordinates_out: Option<PathBuf>,
    /// Largest degree in the ordinate dump
    #[arg(long, default_value_t = 8)]
    ordinates_lmax: usize,
    /// Spectrum normalizing I [default: sample spectrum]
    #[arg(long, value_name = "SPEC")]
    cl: Option<String>,
}

#[derive(Args)]
struct BandArgs {
    /// Gaussian simulations for the baseline and bands (0 disables them)
    #[arg(long, default_value_t = 0)]
    band_sims: usize,
    /// Spectrum of the Gaussian simulations [default: sample spectrum]
    #[arg(long, value_name = "SPEC")]
    cl: Option<String>,
    /// Band coverage
    #[arg(long, default_value_t = 0.68)]
    level: f64,
    /// Seed of the Gaussian simulations
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Density {
    Hills,
    Lakes,
}

#[derive(Args)]
struct CurvatureArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Thresholds in units of the sample SD [default: -3,-2.5,...,3]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    nu: Vec<f64>,
    /// Relative eigenvalue tolerance
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    /// Density whose normalized value the band columns describe
    #[arg(long, value_enum, default_value_t = Density::Hills)]
    band_of: Density,
    #[command(flatten)]
    bands: BandArgs,
    /// Output CSV "nu,h,l,h_norm,l_norm,band_lo,band_hi"
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Moment {
    Skewness,
    Kurtosis,
}

#[derive(Args)]
struct SmhwArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Wavelet scales in radians [default: 0.05,0.1,0.2,0.4,0.8]
    #[arg(long, value_delimiter = ',')]
    scales: Vec<f64>,
    /// Moment the band columns describe
    #[arg(long, value_enum, default_value_t = Moment::Skewness)]
    band_of: Moment,
    #[command(flatten)]
    bands: BandArgs,
    /// Output CSV "R,skewness,kurtosis,band_lo,band_hi"
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct McArgs {
    /// Scenario file (key = value)
    #[arg(long)]
    config: PathBuf,
    /// Output CSV "<grid>,mean,variance,band_lo,band_hi,median"
    #[arg(long)]
    out: PathBuf,
    /// Per-realization values, one row per realization
    #[arg(long, value_name = "FILE")]
    values_out: Option<PathBuf>,
    /// Run manifest [default: <out>.manifest]
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct PowerCurveArgs {
    /// Scenario file (key = value)
    #[arg(long)]
    config: PathBuf,
    /// Amplitudes to test
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    fnl: Vec<f64>,
    /// Output CSV "fnl,fraction,std_error,detected,n"
    #[arg(long)]
    out: PathBuf,
    /// Run manifest [default: <out>.manifest]
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Input(Error),
    Compute(Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Library errors: bad files are input errors, everything else a computation error.
fn compute(e: Error) -> CliError {
    match e {
        Error::Io(_) | Error::Parse { .. } => CliError::Input(e),
        _ => CliError::Compute(e),
    }
}

fn input_err(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| match e {
        Error::Parse { line, msg } => CliError::Input(Error::Io(format!("{}:{line}: {msg}", path.display()))),
        Error::Io(_) => CliError::Input(e),
        other => CliError::Input(Error::Io(format!("{}: {other}", path.display()))),
    }
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    write_atomic(path, contents).map_err(CliError::Compute)
}

/// A field read from disk: coefficients plus observation flags when masked.
struct Field {
    alm: Alm,
    map: Option<SphereMap>,
}

impl Field {
    fn observed(&self) -> Option<&[bool]> {
        self.map.as_ref().filter(|m| m.masked_count() > 0).map(|m| m.mask())
    }
}

fn load_field(path: &Path) -> CliResult<Field> {
    let text = read_text(path).map_err(CliError::Input)?;
    let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
    if first == Some("ALM v1") {
        let alm = parse_alm(&text).map_err(input_err(path))?;
        return Ok(Field { alm, map: None });
    }
    let map = parse_map(&text, None).map_err(input_err(path))?;
    let alm = analyze_observed(&map, map.grid().lmax()).map_err(compute)?;
    Ok(Field { alm, map: Some(map) })
}

fn spectrum(spec: &str, lmax: usize) -> CliResult<PowerSpectrum> {
    spectrum_source(spec, lmax, None).map_err(|e| match e {
        Error::InvalidParameter(m) => CliError::Usage(m),
        other => CliError::Input(other),
    })
}

fn check_level(level: f64) -> CliResult<()> {
    if !(0.0..=1.0).contains(&level) {
        return usage(format!("--level {level} outside [0, 1]"));
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    if a.lmax < 2 {
        return usage("--lmax must be at least 2");
    }
    let expected = a.noise.len().max(1);
    if a.out.len() != expected {
        return usage(format!("expected {expected} --out file(s), got {}", a.out.len()));
    }
    if let Some(b) = a.mask_band {
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&b) {
            return usage("--mask-band must lie in [0, π/2)");
        }
        if matches!(a.format, Format::Alm) {
            return usage("--mask-band needs --format map");
        }
    }
    let cl = spectrum(&a.cl, a.lmax)?;
    let noise: Vec<PowerSpectrum> = a.noise.iter().map(|s| spectrum(s, a.lmax)).collect::<CliResult<_>>()?;

    let gauss = sample_gaussian_alm_stream(&cl, a.lmax, a.seed, 0);
    let signal = if a.fnl == 0.0 {
        gauss
    } else {
        FnlTransform::new(a.lmax)
            .and_then(|t| t.apply(&gauss, &cl, a.fnl))
            .map_err(compute)?
    };
    let alms = if noise.is_empty() {
        vec![signal]
    } else {
        add_noise_channels(&signal, &noise, a.seed).map_err(compute)?.alms().to_vec()
    };
    let grid = build_grid(a.lmax).map_err(compute)?;
    for (alm, out) in alms.iter().zip(&a.out) {
        let text = match a.format {
            Format::Alm => format_alm(alm),
            Format::Map => {
                let map = synthesize(alm, &grid).map_err(compute)?;
                let map = match a.mask_band {
                    Some(b0) => spherestats::apply_mask(&map, &Mask::Band { b0 }),
                    None => map,
                };
                format_map(&map)
            }
        };
        write(out, &text)?;
    }
    Ok(())
}

fn estimate(a: EstimateArgs) -> CliResult<()> {
    let f = load_field(&a.input)?;
    let est = estimate_cl(&f.alm);
    let rows: Vec<Vec<f64>> = (0..=f.alm.lmax()).map(|l| vec![l as f64, est.chat[l]]).collect();
    write(&a.out, &format_csv(&["l", "chat"], &rows))
}

fn load_channels(a: &ChannelArgs) -> CliResult<(ChannelSet, Vec<PowerSpectrum>)> {
    if a.inputs.len() < 2 {
        return usage("at least two --in channels are needed");
    }
    if a.noise.len() != a.inputs.len() {
        return usage(format!("{} channels but {} --noise spectra", a.inputs.len(), a.noise.len()));
    }
    let alms: Vec<Alm> = a.inputs.iter().map(|p| load_field(p).map(|f| f.alm)).collect::<CliResult<_>>()?;
    let lmax = alms[0].lmax();
    let declared: Vec<PowerSpectrum> = a.noise.iter().map(|s| spectrum(s, lmax)).collect::<CliResult<_>>()?;
    let set = ChannelSet::new(alms, declared.clone()).map_err(compute)?;
    Ok((set, declared))
}

fn auto_cross(a: ChannelArgs) -> CliResult<()> {
    let (set, declared) = load_channels(&a)?;
    let auto = auto_power_with(&set, &declared).map_err(compute)?;
    let cross = cross_power(&set).map_err(compute)?;
    let rows: Vec<Vec<f64>> = (0..=set.lmax())
        .map(|l| vec![l as f64, auto.chat[l], cross.chat[l]])
        .collect();
    write(&a.out, &format_csv(&["l", "auto", "cross"], &rows))
}

fn hausman(a: HausmanArgs) -> CliResult<()> {
    let (set, declared) = load_channels(&a.channels)?;
    if set.lmax() < L_MIN + 1 {
        return usage(format!("the Hausman test needs lmax >= {}", L_MIN + 1));
    }
    let h = hausman_statistic(&set, &declared).map_err(compute)?;
    let rows: Vec<Vec<f64>> = h.h.iter().enumerate().map(|(i, v)| vec![(i + h.l_min) as f64, *v]).collect();
    write(&a.channels.out, &format_csv(&["l", "H_l"], &rows))?;

    let big_l = a.big_l.unwrap_or(h.h.len());
    if big_l == 0 || big_l > h.h.len() {
        return usage(format!("--big-l must lie in 1..={}", h.h.len()));
    }
    let bf = brownian_functional(&h.h, big_l).map_err(compute)?;
    if let Some(path) = &a.brownian_out {
        let rows: Vec<Vec<f64>> = bf.r.iter().zip(&bf.b).map(|(r, b)| vec![*r, *b]).collect();
        let mut text = format_csv(&["r", "B_L"], &rows);
        let _ = writeln!(text, "KS={:e},CvM={:e}", bf.ks, bf.cvm);
        write(path, &text)?;
    }
    let reference = brownian_reference(big_l, a.reference_paths, a.seed);
    let ks_ref: Vec<f64> = reference.iter().map(|r| r.0).collect();
    let cvm_ref: Vec<f64> = reference.iter().map(|r| r.1).collect();
    println!(
        "KS={:e} (p={:.4}) CvM={:e} (p={:.4}) over {} reference paths",
        bf.ks,
        mc_p_value(&ks_ref, bf.ks),
        bf.cvm,
        mc_p_value(&cvm_ref, bf.cvm),
        a.reference_paths
    );
    Ok(())
}

fn needlet(a: NeedletArgs) -> CliResult<()> {
    if !(a.bandwidth > 1.0 && a.bandwidth.is_finite()) {
        return usage("--bandwidth must exceed 1");
    }
    let f = load_field(&a.input)?;
    let lmax = f.alm.lmax();
    let cl = match &a.cl {
        Some(s) => spectrum(s, lmax)?,
        None => PowerSpectrum::new(estimate_cl(&f.alm).chat).map_err(compute)?,
    };
    let frame = NeedletFrame::new(a.bandwidth, lmax).map_err(compute)?;
    let mut rows = Vec::new();
    for j in 0..=frame.j_max() {
        let p = match &f.map {
            Some(m) if m.masked_count() > 0 => needlet_power_masked(m, &frame, j, Some(&cl)),
            _ => needlet_power(&f.alm, &frame, j, Some(&cl)),
        }
        .map_err(compute)?;
        rows.push(vec![j as f64, p.gamma_hat, p.expected.unwrap_or(f64::NAN)]);
    }
    write(&a.out, &format_csv(&["j", "Gamma_hat", "Gamma_expected"], &rows))?;
    if let Some(path) = &a.window_out {
        let w = build_window(a.bandwidth, 0).map_err(compute)?;
        let top = a.bandwidth * 1.05;
        let rows: Vec<Vec<f64>> = (0..=400)
            .map(|i| {
                let xi = top * i as f64 / 400.0;
                vec![xi, w.b(xi)]
            })
            .collect();
        write(path, &format_csv(&["xi", "b"], &rows))?;
    }
    Ok(())
}

fn bispectrum(a: BispectrumArgs) -> CliResult<()> {
    let f = load_field(&a.input)?;
    let lmax = f.alm.lmax();
    let big_l = a.big_l.unwrap_or(lmax);
    if big_l < L_MIN || big_l > lmax {
        return usage(format!("--big-l must lie in {L_MIN}..={lmax}"));
    }
    let (series, name) = match a.mode {
        Mode::J1 => {
            if a.k == 0 || a.base + a.k - 1 > lmax {
                return usage(format!("squeezed degrees {}..{} exceed lmax = {lmax}", a.base, a.base + a.k));
            }
            (integrated_j1(&f.alm, big_l, a.k, a.base, None).map_err(compute)?, "J1")
        }
        Mode::J2 => (integrated_j2(&f.alm, big_l, None).map_err(compute)?, "J2"),
    };
    let rows: Vec<Vec<f64>> = series.r.iter().zip(&series.series).map(|(r, v)| vec![*r, *v]).collect();
    write(&a.out, &format_csv(&["r", name], &rows))?;
    if let Some(path) = &a.ordinates_out {
        if a.ordinates_lmax > lmax {
            return usage(format!("--ordinates-lmax exceeds lmax = {lmax}"));
        }
        let cl = match &a.cl {
            Some(s) => spectrum(s, lmax)?,
            None => PowerSpectrum::new(estimate_cl(&f.alm).chat).map_err(compute)?,
        };
        let ords = all_ordinates(&f.alm, &cl, a.ordinates_lmax).map_err(compute)?;
        let rows: Vec<Vec<f64>> = ords
            .iter()
            .map(|o| vec![o.l1 as f64, o.l2 as f64, o.l3 as f64, o.i, o.i_hat])
            .collect();
        write(path, &format_csv(&["l1", "l2", "l3", "I", "Ihat"], &rows))?;
    }
    Ok(())
}

/// Spectrum for baseline simulations: the flag, else the sample spectrum.
fn baseline_spectrum(b: &BandArgs, f: &Field) -> CliResult<PowerSpectrum> {
    match &b.cl {
        Some(s) => spectrum(s, f.alm.lmax()),
        None => PowerSpectrum::new(estimate_cl(&f.alm).chat).map_err(compute),
    }
}

fn check_band_sims(b: &BandArgs) -> CliResult<()> {
    check_level(b.level)?;
    if b.band_sims > 0 && b.band_sims < spherestats::mc::MIN_BAND_SAMPLES {
        return usage(format!(
            "--band-sims needs at least {} simulations (or 0)",
            spherestats::mc::MIN_BAND_SAMPLES
        ));
    }
    Ok(())
}

fn curvature(a: CurvatureArgs) -> CliResult<()> {
    check_band_sims(&a.bands)?;
    if !(a.tau >= 0.0) {
        return usage("--tau must be non-negative");
    }
    let nu = if a.nu.is_empty() { default_nu_grid() } else { a.nu.clone() };
    let f = load_field(&a.input)?;
    let lmax = f.alm.lmax();
    let grid = build_grid(lmax).map_err(compute)?;
    let observed = f.observed().map(<[bool]>::to_vec);
    let curve = curvature_densities(&f.alm, &grid, observed.as_deref(), &nu, a.tau).map_err(compute)?;
    let n = nu.len();
    let nan = vec![f64::NAN; n];
    let (h_norm, l_norm, lo, hi) = if a.bands.band_sims > 0 {
        let cl = baseline_spectrum(&a.bands, &f)?;
        let sims = gaussian_reference(&cl, lmax, a.bands.band_sims, a.bands.seed, |alm| {
            curvature_densities(alm, &grid, observed.as_deref(), &nu, a.tau)
        })
        .map_err(compute)?;
        let (hb, lb) = mean_densities(&sims);
        // Thresholds the baseline never reaches get NaN rather than an error.
        let ratio = |v: &[Option<f64>], base: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(base)
                .map(|(v, b)| v.map_or(f64::NAN, |v| if *b > 0.0 { v / b } else { f64::NAN }))
                .collect()
        };
        let (base, pick): (&[f64], fn(&DensityCurve) -> &Vec<Option<f64>>) = match a.band_of {
            Density::Hills => (&hb, |c| &c.h),
            Density::Lakes => (&lb, |c| &c.l),
        };
        let values: Vec<Vec<f64>> = sims
            .iter()
            .map(|s| ratio(pick(s), base))
            .collect();
        let bands = sparse_bands(&values, a.bands.level).map_err(compute)?;
        (ratio(&curve.h, &hb), ratio(&curve.l, &lb), bands.lo, bands.hi)
    } else {
        (nan.clone(), nan.clone(), nan.clone(), nan)
    };
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            vec![
                nu[k],
                curve.h[k].unwrap_or(f64::NAN),
                curve.l[k].unwrap_or(f64::NAN),
                h_norm[k],
                l_norm[k],
                lo[k],
                hi[k],
            ]
        })
        .collect();
    write(&a.out, &format_csv(&["nu", "h", "l", "h_norm", "l_norm", "band_lo", "band_hi"], &rows))
}

fn smhw(a: SmhwArgs) -> CliResult<()> {
    check_band_sims(&a.bands)?;
    let scales = if a.scales.is_empty() { DEFAULT_SCALES.to_vec() } else { a.scales.clone() };
    if scales.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return usage("--scales must be positive");
    }
    let f = load_field(&a.input)?;
    let lmax = f.alm.lmax();
    let grid = build_grid(lmax).map_err(compute)?;
    let observed = f.observed().map(<[bool]>::to_vec);
    let kernels = scales
        .iter()
        .map(|&r| smhw_kernel(r, lmax))
        .collect::<spherestats::Result<Vec<_>>>()
        .map_err(compute)?;
    let moments = |alm: &Alm| -> spherestats::Result<Vec<(f64, f64)>> {
        kernels
            .iter()
            .map(|k| smhw_moments(&smhw_transform(alm, k, &grid)?, observed.as_deref()))
            .collect()
    };
    let own = moments(&f.alm).map_err(compute)?;
    let n = scales.len();
    let (lo, hi) = if a.bands.band_sims > 0 {
        let cl = baseline_spectrum(&a.bands, &f)?;
        let sims = gaussian_reference(&cl, lmax, a.bands.band_sims, a.bands.seed, |alm| {
            // Null moments see the same mask as the data.
            let alm = match &observed {
                Some(o) => {
                    let map = synthesize(alm, &grid)?;
                    analyze_observed(&SphereMap::with_mask(grid.clone(), map.values().to_vec(), o.clone())?, lmax)?
                }
                None => alm.clone(),
            };
            moments(&alm)
        })
        .map_err(compute)?;
        let values: Vec<Vec<f64>> = sims
            .iter()
            .map(|s| {
                s.iter()
                    .map(|m| if a.band_of == Moment::Skewness { m.0 } else { m.1 })
                    .collect()
            })
            .collect();
        let b = bands_from_values(&values, a.bands.level).map_err(compute)?;
        (b.lo, b.hi)
    } else {
        (vec![f64::NAN; n], vec![f64::NAN; n])
    };
    let rows: Vec<Vec<f64>> = (0..n).map(|k| vec![scales[k], own[k].0, own[k].1, lo[k], hi[k]]).collect();
    write(&a.out, &format_csv(&["R", "skewness", "kurtosis", "band_lo", "band_hi"], &rows))
}

fn load_config(path: &Path) -> CliResult<ScenarioConfig> {
    let text = read_text(path).map_err(CliError::Input)?;
    ScenarioConfig::parse(&text, path.parent()).map_err(|e| match e {
        Error::InvalidParameter(m) => CliError::Usage(format!("{}: {m}", path.display())),
        other => input_err(path)(other),
    })
}

fn manifest_path(out: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    })
}

fn mc(a: McArgs) -> CliResult<()> {
    let c = load_config(&a.config)?;
    let r = run_ensemble(&c).map_err(compute)?;
    let bands = if c.n >= spherestats::mc::MIN_BAND_SAMPLES {
        Some(bands_from_values(&r.values, c.level).map_err(compute)?)
    } else {
        None
    };
    let rows: Vec<Vec<f64>> = (0..r.grid.len())
        .map(|k| {
            let (lo, hi, med) = bands
                .as_ref()
                .map_or((f64::NAN, f64::NAN, f64::NAN), |b| (b.lo[k], b.hi[k], b.median[k]));
            vec![r.grid[k], r.mean[k], r.variance[k], lo, hi, med]
        })
        .collect();
    let label = c.statistic.grid_label();
    write(
        &a.out,
        &format_csv(&[label, "mean", "variance", "band_lo", "band_hi", "median"], &rows),
    )?;
    if let Some(path) = &a.values_out {
        let header: Vec<String> = std::iter::once("sim".to_string())
            .chain(r.grid.iter().map(|g| format!("{label}={g}")))
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = r
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| std::iter::once(i as f64).chain(v.iter().copied()).collect())
            .collect();
        write(path, &format_csv(&header, &rows))?;
    }
    let extra = [
        ("output", a.out.display().to_string()),
        ("rows", r.grid.len().to_string()),
        ("bands", if bands.is_some() { "quantile" } else { "none" }.to_string()),
    ];
    write(&manifest_path(&a.out, &a.manifest), &manifest("mc", &c.to_text(), &extra))
}

fn power(a: PowerCurveArgs) -> CliResult<()> {
    let c = load_config(&a.config)?;
    if c.n < spherestats::mc::MIN_BAND_SAMPLES {
        return usage(format!(
            "power curves need n >= {} for the null bands",
            spherestats::mc::MIN_BAND_SAMPLES
        ));
    }
    let null = calibrate_null(&c).map_err(compute)?;
    let pts = power_curve(&c, &a.fnl, &null).map_err(compute)?;
    let rows: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| vec![p.fnl, p.fraction(), p.std_error(), p.detected as f64, p.n as f64])
        .collect();
    write(&a.out, &format_csv(&["fnl", "fraction", "std_error", "detected", "n"], &rows))?;
    let fnls: Vec<String> = a.fnl.iter().map(|f| format!("{f}")).collect();
    let extra = [
        ("output", a.out.display().to_string()),
        ("fnl_grid", fnls.join(",")),
        (
            "detection_point",
            spherestats::mc::detection_point(&c, null.lo.len()).map_err(compute)?.to_string(),
        ),
    ];
    write(&manifest_path(&a.out, &a.manifest), &manifest("power-curve", &c.to_text(), &extra))
}

fn workers(flag: Option<usize>) -> CliResult<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("SPHERESTATS_WORKERS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .or_else(|_| usage(format!("SPHERESTATS_WORKERS='{v}' is not a number"))),
        _ => Ok(0),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let n = workers(cli.workers)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Compute(Error::Domain(format!("cannot start worker pool: {e}"))))?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::EstimateCl(a) => estimate(a),
        Command::AutoCross(a) => auto_cross(a),
        Command::Hausman(a) => hausman(a),
        Command::Needlet(a) => needlet(a),
        Command::Bispectrum(a) => bispectrum(a),
        Command::Curvature(a) => curvature(a),
        Command::Smhw(a) => smhw(a),
        Command::Mc(a) => mc(a),
        Command::PowerCurve(a) => power(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Input(e)) => {
            eprintln!("input error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Compute(e)) => {
            eprintln!("computation error: {e}");
            ExitCode::from(1)
        }
    }
}
