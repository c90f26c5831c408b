//! File formats: the BIPH1 complex-matrix container, binary PGM (P5) images
//! and full-precision CSV tables.
//!
//! BIPH1 layout: ASCII header lines `BIPH1`, `rows=<int>`, `cols=<int>`,
//! `dtype=c128`, `tag=<string>`, one empty line, then row-major
//! little-endian float64 (re, im) pairs. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn write_biph1(path: &Path, m: &Array2<Complex64>, tag: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "BIPH1\nrows={}\ncols={}\ndtype=c128\ntag={}\n\n", m.nrows(), m.ncols(), tag)?;
    for v in m.iter() {
        w.write_all(&v.re.to_le_bytes())?;
        w.write_all(&v.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_biph1(path: &Path) -> Result<(Array2<Complex64>, String)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();

    let mut read_line = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line)?;
        Ok(line.trim_end_matches('\n').to_string())
    };

    let magic = read_line(&mut r)?;
    if magic != "BIPH1" {
        return Err(Error::Format(format!("bad magic {magic:?}, expected BIPH1")));
    }
    let parse_kv = |s: &str, key: &str| -> Result<String> {
        s.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .map(|v| v.to_string())
            .ok_or_else(|| Error::Format(format!("expected `{key}=...`, got {s:?}")))
    };
    let rows: usize = parse_kv(&read_line(&mut r)?, "rows")?
        .parse()
        .map_err(|e| Error::Format(format!("rows: {e}")))?;
    let cols: usize = parse_kv(&read_line(&mut r)?, "cols")?
        .parse()
        .map_err(|e| Error::Format(format!("cols: {e}")))?;
    let dtype = parse_kv(&read_line(&mut r)?, "dtype")?;
    if dtype != "c128" {
        return Err(Error::Format(format!("unsupported dtype {dtype:?}")));
    }
    let tag = parse_kv(&read_line(&mut r)?, "tag")?;
    let blank = read_line(&mut r)?;
    if !blank.is_empty() {
        return Err(Error::Format("expected empty line after header".into()));
    }

    let mut buf = vec![0u8; rows * cols * 16];
    r.read_exact(&mut buf)?;
    let data: Vec<Complex64> = buf
        .chunks_exact(16)
        .map(|ch| {
            let re = f64::from_le_bytes(ch[0..8].try_into().unwrap());
            let im = f64::from_le_bytes(ch[8..16].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    let m = Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::Format(format!("shape: {e}")))?;
    Ok((m, tag))
}

/// Write a real image as 16-bit binary PGM (P5, maxval 65535), max-normalized.
/// The normalization factor is recorded in a comment line. Negative values
/// are clamped at 0.
pub fn write_pgm16(path: &Path, img: &Array2<f64>) -> Result<()> {
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("image for {}", path.display())));
    }
    let peak = img.iter().cloned().fold(0.0_f64, f64::max);
    let factor = if peak > 0.0 { peak } else { 1.0 };
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n# normalization_factor={factor:.17e}\n{} {}\n65535\n", img.ncols(), img.nrows())?;
    for v in img.iter() {
        let x = (v.max(0.0) / factor * 65535.0).round() as u16;
        w.write_all(&x.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Write an 8-bit PGM preview with values pre-mapped to 0..=255.
pub fn write_pgm8(path: &Path, img: &Array2<u8>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.ncols(), img.nrows())?;
    for v in img.iter() {
        w.write_all(&[*v])?;
    }
    w.flush()?;
    Ok(())
}

/// Read an 8-bit or 16-bit binary PGM (P5), rescaled to [0, 1] by maxval.
pub fn read_pgm(path: &Path) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and # comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    if magic != "P5" {
        return Err(Error::Format(format!("unsupported PGM magic {magic:?}")));
    }
    let width: usize = next_token(&bytes)?.parse().map_err(|e| Error::Format(format!("width: {e}")))?;
    let height: usize =
        next_token(&bytes)?.parse().map_err(|e| Error::Format(format!("height: {e}")))?;
    let maxval: u32 =
        next_token(&bytes)?.parse().map_err(|e| Error::Format(format!("maxval: {e}")))?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} out of range")));
    }
    pos += 1; // single whitespace byte after maxval
    let wide = maxval > 255;
    let need = width * height * if wide { 2 } else { 1 };
    if bytes.len() < pos + need {
        return Err(Error::Format("truncated PGM pixel data".into()));
    }
    let data = &bytes[pos..pos + need];
    let img = Array2::from_shape_fn((height, width), |(r, c)| {
        let i = r * width + c;
        let raw = if wide {
            u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
        } else {
            data[i] as f64
        };
        raw / maxval as f64
    });
    Ok(img)
}

/// Write a real matrix as CSV with 17 significant digits (round-trip exact).
pub fn write_csv_matrix(path: &Path, img: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in img.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv_matrix(path: &Path) -> Result<Array2<f64>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty CSV".into()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("ragged CSV rows".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let nrows = flat.len() / cols;
    Array2::from_shape_vec((nrows, cols), flat).map_err(|e| Error::Format(e.to_string()))
}
