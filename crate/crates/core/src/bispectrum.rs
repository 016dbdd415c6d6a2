//! Rotation-invariant bispectrum ordinates and the integrated squeezed and
//! equilateral statistics.
//!
//! An ordinate is
//! `I_{l1l2l3} = (-1)^{(l1+l2+l3)/2} Σ_m (l1 l2 l3; m1 m2 m3) a_{l1m1} a_{l2m2} a_{l3m3}
//! / √(C_l1 C_l2 C_l3)`, zero whenever the degrees violate the triangle or
//! parity rules. `Î` normalizes by the sample spectrum instead.
//!
//! 3j tables are the expensive part. Ensembles should build one
//! [`BispectrumTables`] and reuse it for every realization.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::PowerSpectrum;
use crate::grid::Alm;
use crate::harmonic::ThreeJTable;
use crate::spectra::{estimate_cl, L_MIN};

pub type Triple = (usize, usize, usize);

/// Whether `(l1, l2, l3)` can carry a nonzero ordinate.
pub fn admissible(l1: usize, l2: usize, l3: usize) -> bool {
    (l1 + l2 + l3) % 2 == 0 && l3 <= l1 + l2 && l1 <= l2 + l3 && l2 <= l1 + l3
}

/// Precomputed 3j tables keyed by sorted degree triple.
#[derive(Debug, Clone, Default)]
pub struct BispectrumTables {
    tables: BTreeMap<Triple, ThreeJTable>,
}

fn sorted(t: Triple) -> Triple {
    let mut v = [t.0, t.1, t.2];
    v.sort_unstable();
    (v[0], v[1], v[2])
}

impl BispectrumTables {
    /// Tables for every admissible triple in `triples`.
    pub fn new(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut keys: Vec<Triple> = triples
            .into_iter()
            .map(sorted)
            .filter(|&(a, b, c)| admissible(a, b, c))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        let built: Vec<(Triple, ThreeJTable)> = keys
            .into_par_iter()
            .map(|t| (t, ThreeJTable::new(t.0 as i64, t.1 as i64, t.2 as i64)))
            .collect();
        Self {
            tables: built.into_iter().collect(),
        }
    }

    /// Tables needed by [`integrated_j1`] with these parameters.
    pub fn for_j1(big_l: usize, base: usize, k: usize) -> Self {
        Self::new(j1_triples(big_l, base, k))
    }

    /// Tables needed by [`integrated_j2`].
    pub fn for_j2(big_l: usize) -> Self {
        Self::new((L_MIN..=big_l).map(|l| (l, l, l)))
    }

    pub fn merged(mut self, other: Self) -> Self {
        self.tables.extend(other.tables);
        self
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    fn get(&self, t: Triple) -> Option<&ThreeJTable> {
        self.tables.get(&sorted(t))
    }
}

fn j1_triples(big_l: usize, base: usize, k: usize) -> impl Iterator<Item = Triple> {
    (L_MIN..=big_l).flat_map(move |l2| (0..k).map(move |o| (base + o, l2, l2)))
}

/// `(-1)^{(l1+l2+l3)/2} Σ_m 3j · a a a` without normalization.
fn raw_ordinate(alm: &Alm, t: Triple, table: &ThreeJTable) -> f64 {
    let (l1, l2, l3) = sorted(t);
    let (i1, i2, i3) = (l1 as i64, l2 as i64, l3 as i64);
    let mut acc = num_complex::Complex64::new(0.0, 0.0);
    let mut scale = 0.0;
    for m1 in -i1..=i1 {
        let a1 = alm.get(l1, m1);
        let lo = (-i2).max(-i3 - m1);
        let hi = i2.min(i3 - m1);
        for m2 in lo..=hi {
            let w = table.get(m1, m2);
            if w != 0.0 {
                let term = a1 * alm.get(l2, m2) * alm.get(l3, -m1 - m2) * w;
                scale += term.norm();
                acc += term;
            }
        }
    }
    debug_assert!(
        acc.im.abs() <= 1e-10 * scale || acc.im.abs() < 1e-200,
        "bispectrum ordinate has imaginary residue {}",
        acc.im
    );
    let phase = if ((l1 + l2 + l3) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    phase * acc.re
}

fn check_degrees(alm: &Alm, t: Triple) -> Result<()> {
    let top = t.0.max(t.1).max(t.2);
    if top > alm.lmax() {
        return Err(Error::BandLimit(format!(
            "ordinate ({}, {}, {}) needs degree {top}, coefficients stop at {}",
            t.0,
            t.1,
            t.2,
            alm.lmax()
        )));
    }
    Ok(())
}

fn normalized(alm: &Alm, t: Triple, spectrum: &[f64], tables: Option<&BispectrumTables>) -> Result<f64> {
    check_degrees(alm, t)?;
    let t = sorted(t);
    if !admissible(t.0, t.1, t.2) {
        return Ok(0.0);
    }
    let denom = spectrum[t.0] * spectrum[t.1] * spectrum[t.2];
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!(
            "zero power at one of the degrees ({}, {}, {})",
            t.0, t.1, t.2
        )));
    }
    let raw = match tables.and_then(|tb| tb.get(t)) {
        Some(table) => raw_ordinate(alm, t, table),
        None => raw_ordinate(alm, t, &ThreeJTable::new(t.0 as i64, t.1 as i64, t.2 as i64)),
    };
    Ok(raw / denom.sqrt())
}

/// `I_{l1l2l3}` normalized by the model spectrum.
pub fn bispectrum_i(alm: &Alm, cl: &PowerSpectrum, l1: usize, l2: usize, l3: usize) -> Result<f64> {
    let spectrum: Vec<f64> = (0..=alm.lmax()).map(|l| cl.get(l)).collect();
    normalized(alm, (l1, l2, l3), &spectrum, None)
}

/// `Î_{l1l2l3}` normalized by the sample spectrum `Ĉ_l`.
pub fn bispectrum_i_hat(alm: &Alm, l1: usize, l2: usize, l3: usize) -> Result<f64> {
    normalized(alm, (l1, l2, l3), &estimate_cl(alm).chat, None)
}

/// `Î` with precomputed tables and sample spectrum.
pub fn bispectrum_i_hat_with(
    alm: &Alm,
    chat: &[f64],
    tables: &BispectrumTables,
    t: Triple,
) -> Result<f64> {
    normalized(alm, t, chat, Some(tables))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegratedMode {
    /// `J1`: squeezed ordinates `(base + k, l, l)`.
    Squeezed,
    /// `J2`: equilateral ordinates `(l, l, l)`.
    Equilateral,
}

/// Cumulative series on the grid `r = n/L`, `n = 0..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedBispectrum {
    pub mode: IntegratedMode,
    pub big_l: usize,
    /// Number of squeezed offsets; 1 for the equilateral mode.
    pub k: usize,
    pub r: Vec<f64>,
    pub series: Vec<f64>,
}

impl IntegratedBispectrum {
    /// Value at `r = 1`.
    pub fn total(&self) -> f64 {
        *self.series.last().unwrap_or(&0.0)
    }
}

fn cumulative(mode: IntegratedMode, big_l: usize, k: usize, terms: Vec<f64>) -> IntegratedBispectrum {
    // terms[n] is the contribution of degree n; degrees below L_MIN are zero.
    let mut series = Vec::with_capacity(big_l + 1);
    let mut acc = 0.0;
    for t in terms {
        acc += t;
        series.push(acc);
    }
    IntegratedBispectrum {
        mode,
        big_l,
        k,
        r: (0..=big_l).map(|n| n as f64 / big_l as f64).collect(),
        series,
    }
}

/// `J1_L(r) = Σ_{2 <= l <= ⌊Lr⌋} K^{-1/2} Σ_{k<K} Î_{base+k, l, l}`.
pub fn integrated_j1(
    alm: &Alm,
    big_l: usize,
    k: usize,
    base: usize,
    tables: Option<&BispectrumTables>,
) -> Result<IntegratedBispectrum> {
    if big_l < L_MIN || big_l > alm.lmax() {
        return Err(Error::InvalidParameter(format!(
            "J1 needs {L_MIN} <= L <= lmax = {}, got L = {big_l}",
            alm.lmax()
        )));
    }
    if k == 0 || base < L_MIN || base + k - 1 > alm.lmax() {
        return Err(Error::InvalidParameter(format!(
            "J1 squeezed degrees {base}..{} must lie in [{L_MIN}, {}]",
            base + k.max(1) - 1,
            alm.lmax()
        )));
    }
    let chat = estimate_cl(alm).chat;
    let norm = 1.0 / (k as f64).sqrt();
    let mut terms = vec![0.0; big_l + 1];
    for (l, t) in terms.iter_mut().enumerate().skip(L_MIN) {
        let mut s = 0.0;
        for o in 0..k {
            let tri = (base + o, l, l);
            s += normalized(alm, tri, &chat, tables)?;
        }
        *t = norm * s;
    }
    Ok(cumulative(IntegratedMode::Squeezed, big_l, k, terms))
}

/// `J2_L(r) = Σ_{2 <= l <= ⌊Lr⌋} Î_{lll}`; odd `l` contribute zero.
pub fn integrated_j2(
    alm: &Alm,
    big_l: usize,
    tables: Option<&BispectrumTables>,
) -> Result<IntegratedBispectrum> {
    if big_l < L_MIN || big_l > alm.lmax() {
        return Err(Error::InvalidParameter(format!(
            "J2 needs {L_MIN} <= L <= lmax = {}, got L = {big_l}",
            alm.lmax()
        )));
    }
    let chat = estimate_cl(alm).chat;
    let mut terms = vec![0.0; big_l + 1];
    for (l, t) in terms.iter_mut().enumerate().skip(L_MIN) {
        *t = normalized(alm, (l, l, l), &chat, tables)?;
    }
    Ok(cumulative(IntegratedMode::Equilateral, big_l, 1, terms))
}

/// Ordinate dump row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BispectrumOrdinate {
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    pub i: f64,
    pub i_hat: f64,
}

/// `I` and `Î` for every triple with `l1 <= l2 <= l3 <= lmax`, `l1 >= 2`.
pub fn all_ordinates(alm: &Alm, cl: &PowerSpectrum, lmax: usize) -> Result<Vec<BispectrumOrdinate>> {
    if lmax > alm.lmax() {
        return Err(Error::BandLimit(format!(
            "ordinates up to {lmax} requested, coefficients stop at {}",
            alm.lmax()
        )));
    }
    let mut triples = Vec::new();
    for l1 in L_MIN..=lmax {
        for l2 in l1..=lmax {
            for l3 in l2..=lmax {
                if admissible(l1, l2, l3) {
                    triples.push((l1, l2, l3));
                }
            }
        }
    }
    let chat = estimate_cl(alm).chat;
    let spectrum: Vec<f64> = (0..=alm.lmax()).map(|l| cl.get(l)).collect();
    triples
        .into_par_iter()
        .map(|t| {
            let table = BispectrumTables::new([t]);
            Ok(BispectrumOrdinate {
                l1: t.0,
                l2: t.1,
                l3: t.2,
                i: normalized(alm, t, &spectrum, Some(&table))?,
                i_hat: normalized(alm, t, &chat, Some(&table))?,
            })
        })
        .collect()
}
