//! Correlation images: sum/difference projections of G2 and their scores
//! (normalized cross-correlation fidelity, peak metrics).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::lattice::{MapMode, MapSign, SumCoordinateMap};
use crate::propagate::G2Matrix;

/// Real nonnegative histogram over the sum or difference coordinate.
///
/// Bin b corresponds to the raw index sum (or difference) of the photon
/// pair; `center_bin` marks the bin holding the physical zero of the
/// projected coordinate, and `pitch` is the per-bin physical scale of the
/// raw sum (the photon-pair coordinate sum advances one grid pitch per bin).
#[derive(Debug, Clone)]
pub struct CorrelationImage {
    pub values: Array2<f64>,
    pub map: SumCoordinateMap,
    pub center_bin: (usize, usize),
    pub pitch: f64,
}

impl CorrelationImage {
    pub fn side(&self) -> usize {
        self.map.out_side()
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Value at the physical-zero bin (the optimization target).
    pub fn center_value(&self) -> f64 {
        self.values[[self.center_bin.0, self.center_bin.1]]
    }

    /// Re-index onto object coordinates: an n-by-n view where pixel o maps to
    /// bin center_bin + (o - n/2), wrapping on circular maps. This undoes the
    /// raw-index shift so restored images align with the encoded object.
    pub fn object_aligned(&self, n: usize) -> Array2<f64> {
        let c = (n / 2) as isize;
        let side = self.side() as isize;
        Array2::from_shape_fn((n, n), |(a, b)| {
            let ba = self.center_bin.0 as isize + a as isize - c;
            let bb = self.center_bin.1 as isize + b as isize - c;
            match self.map.mode() {
                MapMode::Circular => {
                    self.values[[ba.rem_euclid(side) as usize, bb.rem_euclid(side) as usize]]
                }
                MapMode::Linear => {
                    if (0..side).contains(&ba) && (0..side).contains(&bb) {
                        self.values[[ba as usize, bb as usize]]
                    } else {
                        0.0
                    }
                }
            }
        })
    }
}

/// Entrywise squared modulus of a pure state.
pub fn g2_from_pure(psi: &crate::biphoton::TwoPhotonPure) -> G2Matrix {
    let values = psi.psi.mapv(|v| v.norm_sqr());
    G2Matrix { grid: psi.grid, values }
}

fn project(g2: &G2Matrix, map: &SumCoordinateMap, want: MapSign) -> Result<CorrelationImage> {
    if map.sign() != want {
        return Err(Error::InvalidParameter(format!(
            "projection needs a {want:?} map, got {:?}",
            map.sign()
        )));
    }
    if map.n() != g2.grid.n() {
        return Err(Error::DimensionMismatch(format!(
            "map n = {} vs grid n = {}",
            map.n(),
            g2.grid.n()
        )));
    }
    let side = map.out_side();
    let mut values = Array2::zeros((side, side));
    let grid = g2.grid;
    for (i_flat, i) in grid.points().enumerate() {
        for (s_flat, s) in grid.points().enumerate() {
            let (ba, bb) = map.bin_of(i, s);
            values[[ba, bb]] += g2.values[[i_flat, s_flat]];
        }
    }
    let cb = map.center_bin_axis(&grid);
    Ok(CorrelationImage { values, map: *map, center_bin: (cb, cb), pitch: grid.pitch() })
}

/// Sum-coordinate projection Gamma+(b) = sum of G2 over pairs with
/// (i + s) mapping to b; total mass is preserved.
pub fn project_sum(g2: &G2Matrix, map: &SumCoordinateMap) -> Result<CorrelationImage> {
    project(g2, map, MapSign::Sum)
}

/// Difference-coordinate projection Gamma-.
pub fn project_diff(g2: &G2Matrix, map: &SumCoordinateMap) -> Result<CorrelationImage> {
    project(g2, map, MapSign::Difference)
}

/// Zero-mean normalized cross-correlation at zero shift between a correlation
/// image and a reference intensity image in object coordinates (reference
/// pixel o is compared against image bin center_bin + (o - n/2)). Both are
/// max-normalized first; the score is in [-1, 1].
pub fn fidelity_ncc(img: &CorrelationImage, reference: &Array2<f64>) -> Result<f64> {
    if reference.nrows() != reference.ncols() {
        return Err(Error::DimensionMismatch("reference must be square".into()));
    }
    let n = reference.nrows();
    let aligned = img.object_aligned(n);
    ncc_zero_shift(&aligned, reference)
}

/// Plain zero-mean NCC between two same-shape images (max-normalized first).
pub fn ncc_zero_shift(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("NCC shapes {:?} vs {:?}", a.dim(), b.dim())));
    }
    let peak_a = a.iter().cloned().fold(0.0_f64, f64::max);
    let peak_b = b.iter().cloned().fold(0.0_f64, f64::max);
    let sa = if peak_a > 0.0 { peak_a } else { 1.0 };
    let sb = if peak_b > 0.0 { peak_b } else { 1.0 };
    let ma = a.mean().unwrap() / sa;
    let mb = b.mean().unwrap() / sb;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let xa = x / sa - ma;
        let yb = y / sb - mb;
        num += xa * yb;
        va += xa * xa;
        vb += yb * yb;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(num / (va * vb).sqrt())
}

/// Summary scores of a correlation image.
#[derive(Debug, Clone, Copy)]
pub struct PeakMetrics {
    /// Value at the physical-zero bin (the optimization objective).
    pub center_value: f64,
    /// Global maximum.
    pub peak_value: f64,
    /// Full width at half maximum of the global peak, in bins, averaged over
    /// the two axes (capped at the image side for structureless images).
    pub fwhm_px: f64,
    /// Speckle contrast std/mean over the full image.
    pub contrast: f64,
}

pub fn peak_metrics(img: &CorrelationImage) -> PeakMetrics {
    let side = img.side();
    let values = &img.values;
    let mut peak = 0.0_f64;
    let mut peak_at = (0usize, 0usize);
    for ((a, b), &v) in values.indexed_iter() {
        if v > peak {
            peak = v;
            peak_at = (a, b);
        }
    }
    let mean = values.mean().unwrap_or(0.0);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (side * side) as f64;
    let contrast = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };

    let fwhm = if peak > 0.0 {
        let half = peak / 2.0;
        // half-max extent along a lattice direction, by linear interpolation
        let extent = |step: (isize, isize)| -> f64 {
            let mut prev = peak;
            for k in 1..side as isize {
                let a = peak_at.0 as isize + k * step.0;
                let b = peak_at.1 as isize + k * step.1;
                let v = match img.map.mode() {
                    MapMode::Circular => {
                        values[[a.rem_euclid(side as isize) as usize, b.rem_euclid(side as isize) as usize]]
                    }
                    MapMode::Linear => {
                        if (0..side as isize).contains(&a) && (0..side as isize).contains(&b) {
                            values[[a as usize, b as usize]]
                        } else {
                            0.0
                        }
                    }
                };
                if v <= half {
                    return (k - 1) as f64 + (prev - half) / (prev - v).max(f64::MIN_POSITIVE);
                }
                prev = v;
            }
            side as f64 / 2.0
        };
        let w0 = extent((1, 0)) + extent((-1, 0));
        let w1 = extent((0, 1)) + extent((0, -1));
        ((w0 + w1) / 2.0).min(side as f64)
    } else {
        side as f64
    };

    PeakMetrics { center_value: img.center_value(), peak_value: peak, fwhm_px: fwhm, contrast }
}
