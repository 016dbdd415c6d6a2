//! Text file formats.
//!
//! * `SMAP v1`: header lines `SMAP v1`, `lmax <L>`, `ntheta <n>`, `nphi <n>`,
//!   `masked <count>`, then one pixel value per line, ring by ring; masked
//!   pixels are written as `M`.
//! * `ALM v1`: header `ALM v1`, `lmax <L>`, then `l m re im` lines for `m >= 0`.
//! * `CL v1`: optional header `CL v1`, then `l C_l` lines; degrees not listed
//!   are zero.
//!
//! Blank lines and lines starting with `#` are ignored on input. Floats are
//! written with Rust's shortest round-trip scientific formatting, so a value
//! read back is bit-identical to the value written.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::PowerSpectrum;
use crate::grid::{build_grid, Alm, SphereGrid, SphereMap};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Content lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_num<T: FromStr>(line: usize, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| parse_err(line, format!("cannot parse number '{s}'")))
}

fn expect_key<'a>(
    it: &mut impl Iterator<Item = (usize, &'a str)>,
    key: &str,
) -> Result<(usize, usize)> {
    let (n, line) = it
        .next()
        .ok_or_else(|| parse_err(0, format!("missing '{key}' header")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(parse_err(n, format!("expected '{key}' header")));
    }
    let v = parts
        .next()
        .ok_or_else(|| parse_err(n, format!("'{key}' needs a value")))?;
    Ok((n, parse_num(n, v)?))
}

fn expect_magic<'a>(it: &mut impl Iterator<Item = (usize, &'a str)>, magic: &str) -> Result<()> {
    match it.next() {
        Some((_, l)) if l == magic => Ok(()),
        Some((n, _)) => Err(parse_err(n, format!("expected '{magic}'"))),
        None => Err(parse_err(0, "empty file")),
    }
}

/// Write `contents` to a sibling temporary file and rename it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("'{}' is not a file path", path.display())))?;
    let tmp_name = format!(".{}.tmp{}", name.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(tmp_name),
        None => tmp_name.into(),
    };
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn format_map(map: &SphereMap) -> String {
    let g = map.grid();
    let mut s = String::with_capacity(map.values().len() * 24 + 64);
    let _ = writeln!(s, "SMAP v1");
    let _ = writeln!(s, "lmax {}", g.lmax());
    let _ = writeln!(s, "ntheta {}", g.ntheta());
    let _ = writeln!(s, "nphi {}", g.nphi());
    let _ = writeln!(s, "masked {}", map.masked_count());
    for (v, &obs) in map.values().iter().zip(map.mask()) {
        if obs {
            let _ = writeln!(s, "{v:e}");
        } else {
            s.push_str("M\n");
        }
    }
    s
}

/// Parse an SMAP file, building its grid (or reusing `grid` when it matches).
pub fn parse_map(text: &str, grid: Option<&Arc<SphereGrid>>) -> Result<SphereMap> {
    let mut it = content_lines(text);
    expect_magic(&mut it, "SMAP v1")?;
    let (n, lmax) = expect_key(&mut it, "lmax")?;
    let (_, ntheta) = expect_key(&mut it, "ntheta")?;
    let (_, nphi) = expect_key(&mut it, "nphi")?;
    let (mn, masked) = expect_key(&mut it, "masked")?;
    if ntheta != lmax + 1 || nphi != 2 * lmax + 1 {
        return Err(parse_err(n, "ntheta/nphi do not match a Gauss–Legendre grid of this lmax"));
    }
    let grid = match grid {
        Some(g) if g.lmax() == lmax => g.clone(),
        _ => build_grid(lmax).map_err(|e| parse_err(n, e.to_string()))?,
    };
    let mut values = Vec::with_capacity(grid.npix());
    let mut mask = Vec::with_capacity(grid.npix());
    for (ln, line) in it {
        if values.len() == grid.npix() {
            return Err(parse_err(ln, "more pixel values than the grid holds"));
        }
        if line == "M" {
            values.push(0.0);
            mask.push(false);
        } else {
            values.push(parse_num(ln, line)?);
            mask.push(true);
        }
    }
    if values.len() != grid.npix() {
        return Err(parse_err(0, format!("expected {} pixels, found {}", grid.npix(), values.len())));
    }
    let count = mask.iter().filter(|&&o| !o).count();
    if count != masked {
        return Err(parse_err(mn, format!("header says {masked} masked pixels, found {count}")));
    }
    SphereMap::with_mask(grid, values, mask)
}

pub fn format_alm(alm: &Alm) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ALM v1");
    let _ = writeln!(s, "lmax {}", alm.lmax());
    for l in 0..=alm.lmax() {
        for m in 0..=l {
            let v = alm.get(l, m as i64);
            let _ = writeln!(s, "{l} {m} {:e} {:e}", v.re, v.im);
        }
    }
    s
}

pub fn parse_alm(text: &str) -> Result<Alm> {
    let mut it = content_lines(text);
    expect_magic(&mut it, "ALM v1")?;
    let (_, lmax) = expect_key(&mut it, "lmax")?;
    let mut alm = Alm::zeros(lmax);
    for (n, line) in it {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(parse_err(n, "expected 'l m re im'"));
        }
        let (l, m): (usize, usize) = (parse_num(n, f[0])?, parse_num(n, f[1])?);
        if l > lmax || m > l {
            return Err(parse_err(n, format!("index (l={l}, m={m}) outside lmax {lmax}")));
        }
        alm.set(l, m, Complex64::new(parse_num(n, f[2])?, parse_num(n, f[3])?));
    }
    Ok(alm)
}

pub fn format_spectrum(cl: &PowerSpectrum) -> String {
    let mut s = String::from("CL v1\n");
    for (l, c) in cl.as_slice().iter().enumerate() {
        let _ = writeln!(s, "{l} {c:e}");
    }
    s
}

pub fn parse_spectrum(text: &str) -> Result<PowerSpectrum> {
    let mut entries = Vec::new();
    for (n, line) in content_lines(text) {
        if line == "CL v1" {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 2 {
            return Err(parse_err(n, "expected 'l C_l'"));
        }
        let l: usize = parse_num(n, f[0])?;
        let c: f64 = parse_num(n, f[1])?;
        if !(c.is_finite() && c >= 0.0) {
            return Err(parse_err(n, format!("C_{l} = {c} must be finite and non-negative")));
        }
        entries.push((l, c));
    }
    let lmax = entries
        .iter()
        .map(|e| e.0)
        .max()
        .ok_or_else(|| parse_err(0, "spectrum file has no entries"))?;
    let mut cl = vec![0.0; lmax + 1];
    for (l, c) in entries {
        cl[l] = c;
    }
    PowerSpectrum::new(cl)
}

/// CSV with a header row; every value in shortest round-trip scientific form.
// Integral values (indices, counts) print plainly; the rest keep full precision.
fn csv_cell(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

pub fn format_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&v| csv_cell(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sample_gaussian_alm;
    use crate::grid::{apply_mask, synthesize, Mask};

    #[test]
    fn map_roundtrip_is_bit_exact() {
        let g = build_grid(6).unwrap();
        let cl = PowerSpectrum::flat(6, 1.0).unwrap();
        let map = synthesize(&sample_gaussian_alm(&cl, 1), &g).unwrap();
        let map = apply_mask(&map, &Mask::Band { b0: 0.3 });
        let text = format_map(&map);
        let back = parse_map(&text, Some(&g)).unwrap();
        assert_eq!(back.mask(), map.mask());
        for ((a, b), &o) in back.values().iter().zip(map.values()).zip(map.mask()) {
            if o {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(format_map(&back), text);
    }

    #[test]
    fn alm_and_spectrum_roundtrip() {
        let cl = PowerSpectrum::power_law(10, 1.0).unwrap();
        let a = sample_gaussian_alm(&cl, 3);
        assert_eq!(parse_alm(&format_alm(&a)).unwrap(), a);
        assert_eq!(parse_spectrum(&format_spectrum(&cl)).unwrap(), cl);
        let sparse = parse_spectrum("# comment\n3 2.5\n").unwrap();
        assert_eq!(sparse.as_slice(), &[0.0, 0.0, 0.0, 2.5]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse_spectrum("CL v1\n2 1.0\n3 x\n").unwrap_err();
        assert_eq!(e, Error::Parse { line: 3, msg: "cannot parse number 'x'".into() });
        assert!(parse_alm("ALM v1\nlmax 2\n3 0 1 0\n").is_err());
        assert!(parse_map("SMAP v1\nlmax 2\nntheta 3\nnphi 5\nmasked 0\n1\n", None).is_err());
        assert!(parse_spectrum("CL v1\n2 -1\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = std::env::temp_dir().join(format!("spherestats-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("out.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b\n");
        let leftovers = fs::read_dir(&dir).unwrap().count();
        assert_eq!(leftovers, 1);
        fs::remove_dir_all(&dir).unwrap();
    }
}
