//! Discrete transverse-space foundation: square grids, flattened complex
//! fields, unitary 2-D DFTs and the sum/difference coordinate maps used by
//! every other module.
//!
//! Conventions fixed here and relied on everywhere else:
//! * a grid point is an index pair `(a, b)` with `a, b in 0..n`, flattened
//!   row-major as `a * n + b`;
//! * the physical coordinate of index `a` is `(a - n/2) * pitch`, so the
//!   pixel `n/2` sits at the physical origin;
//! * `dft2` is the unitary, uncentered transform (delta at index 0 maps to a
//!   constant); the centered variant used by lens operators lives in
//!   [`crate::media`].

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Boundary handling of a grid: `Circular` grids support exact DFT and
/// circulant identities, `Linear` grids model finite apertures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Circular,
    Linear,
}

/// Square n-by-n transverse grid with a physical pixel pitch in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    pitch: f64,
    boundary: Boundary,
}

impl Grid {
    pub fn new(n: usize, pitch: f64, boundary: Boundary) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("grid needs n >= 2, got {n}")));
        }
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::InvalidParameter(format!("grid pitch must be positive, got {pitch}")));
        }
        Ok(Grid { n, pitch, boundary })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Flattened vector length d = n^2.
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    /// Index of the pixel sitting at the physical origin (per axis).
    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Physical coordinate of per-axis index `a`.
    pub fn coord(&self, a: usize) -> f64 {
        (a as f64 - self.center() as f64) * self.pitch
    }

    pub fn flatten(&self, a: usize, b: usize) -> usize {
        debug_assert!(a < self.n && b < self.n);
        a * self.n + b
    }

    pub fn unflatten(&self, idx: usize) -> (usize, usize) {
        debug_assert!(idx < self.dim());
        (idx / self.n, idx % self.n)
    }

    /// Iterator over all index pairs in flattening order.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |a| (0..n).map(move |b| (a, b)))
    }

    /// Squared physical distance between two pixels (plain, unwrapped).
    pub fn dist2(&self, p: (usize, usize), q: (usize, usize)) -> f64 {
        let dx = (p.0 as f64 - q.0 as f64) * self.pitch;
        let dy = (p.1 as f64 - q.1 as f64) * self.pitch;
        dx * dx + dy * dy
    }

    /// Squared toroidal distance (wrapped per axis), used by circular media.
    pub fn dist2_wrapped(&self, p: (usize, usize), q: (usize, usize)) -> f64 {
        let n = self.n as isize;
        let wrap = |d: isize| -> f64 {
            let mut d = d.rem_euclid(n);
            if d > n / 2 {
                d -= n;
            }
            d as f64 * self.pitch
        };
        let dx = wrap(p.0 as isize - q.0 as isize);
        let dy = wrap(p.1 as isize - q.1 as isize);
        dx * dx + dy * dy
    }
}

/// Complex field over a grid, stored flattened (length d).
#[derive(Debug, Clone)]
pub struct ComplexField {
    pub grid: Grid,
    pub values: Array1<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid, values: Array1<Complex64>) -> Result<Self> {
        if values.len() != grid.dim() {
            return Err(Error::DimensionMismatch(format!(
                "field length {} != grid dimension {}",
                values.len(),
                grid.dim()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("complex field entries".into()));
        }
        Ok(ComplexField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        ComplexField { grid, values: Array1::zeros(grid.dim()) }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let n = grid.n();
        let values = Array1::from_shape_fn(grid.dim(), |i| f(i / n, i % n));
        ComplexField { grid, values }
    }

    /// View the flattened values as an n-by-n array.
    pub fn as_grid(&self) -> ArrayView2<'_, Complex64> {
        let n = self.grid.n();
        self.values.view().into_shape_with_order((n, n)).expect("d = n^2")
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Intensity |E|^2 as an n-by-n real array.
    pub fn intensity(&self) -> Array2<f64> {
        let n = self.grid.n();
        Array2::from_shape_fn((n, n), |(a, b)| self.values[self.grid.flatten(a, b)].norm_sqr())
    }
}

/// Direction of the unitary DFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DftDirection {
    Forward,
    Inverse,
}

/// Unitary 2-D DFT of a field on a circular grid.
///
/// Forward kernel per axis is exp(-2*pi*i*k*x/n)/sqrt(n); inverse composed
/// with forward is the identity and the transform preserves the l2 norm.
pub fn dft2(field: &ComplexField, direction: DftDirection) -> Result<ComplexField> {
    if field.grid.boundary() != Boundary::Circular {
        return Err(Error::BoundaryMismatch(
            "dft2 assumes periodicity; construct the grid with Boundary::Circular".into(),
        ));
    }
    let n = field.grid.n();
    let mut buf: Vec<Complex64> = field.values.to_vec();
    dft2_inplace(&mut buf, n, direction);
    Ok(ComplexField { grid: field.grid, values: Array1::from(buf) })
}

/// In-place unitary 2-D DFT over a flattened n-by-n buffer.
pub(crate) fn dft2_inplace(buf: &mut [Complex64], n: usize, direction: DftDirection) {
    debug_assert_eq!(buf.len(), n * n);
    let mut planner = FftPlanner::new();
    let fft = match direction {
        DftDirection::Forward => planner.plan_fft_forward(n),
        DftDirection::Inverse => planner.plan_fft_inverse(n),
    };
    // rows
    for r in 0..n {
        fft.process(&mut buf[r * n..(r + 1) * n]);
    }
    // columns via gather, fft, scatter
    let mut col = vec![Complex64::default(); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = buf[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            buf[r * n + c] = col[r];
        }
    }
    let scale = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// Output-side mode of a coordinate map: circular wraps modulo n, linear
/// allocates 2n-1 bins per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapMode {
    Circular,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapSign {
    Sum,
    Difference,
}

/// Index map from photon-pair positions to sum (or difference) coordinate
/// bins, using raw index arithmetic: circular sum bin is (i + j) mod n,
/// linear sum bin is i + j; differences shift by n-1 in linear mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SumCoordinateMap {
    n: usize,
    mode: MapMode,
    sign: MapSign,
}

impl SumCoordinateMap {
    pub fn new(grid: &Grid, mode: MapMode, sign: MapSign) -> Result<Self> {
        if mode == MapMode::Circular && grid.boundary() != Boundary::Circular {
            return Err(Error::BoundaryMismatch(
                "circular coordinate map requires a circular grid".into(),
            ));
        }
        Ok(SumCoordinateMap { n: grid.n(), mode, sign })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> MapMode {
        self.mode
    }

    pub fn sign(&self) -> MapSign {
        self.sign
    }

    /// Bins per output axis.
    pub fn out_side(&self) -> usize {
        match self.mode {
            MapMode::Circular => self.n,
            MapMode::Linear => 2 * self.n - 1,
        }
    }

    /// Per-axis bin of an index pair.
    pub fn bin_axis(&self, i: usize, j: usize) -> usize {
        let n = self.n as isize;
        let (i, j) = (i as isize, j as isize);
        let raw = match self.sign {
            MapSign::Sum => i + j,
            MapSign::Difference => i - j,
        };
        match self.mode {
            MapMode::Circular => raw.rem_euclid(n) as usize,
            MapMode::Linear => match self.sign {
                MapSign::Sum => raw as usize,
                MapSign::Difference => (raw + n - 1) as usize,
            },
        }
    }

    /// 2-D bin of a pair of grid points.
    pub fn bin_of(&self, i: (usize, usize), j: (usize, usize)) -> (usize, usize) {
        (self.bin_axis(i.0, j.0), self.bin_axis(i.1, j.1))
    }

    /// Per-axis bin holding the physical zero of the projected coordinate,
    /// given the grid's center pixel c = n/2: sum maps it to 2c, difference
    /// to 0 (circular) or n-1 (linear).
    pub fn center_bin_axis(&self, grid: &Grid) -> usize {
        let c = grid.center();
        match self.sign {
            MapSign::Sum => match self.mode {
                MapMode::Circular => (2 * c) % self.n,
                MapMode::Linear => 2 * c,
            },
            MapSign::Difference => match self.mode {
                MapMode::Circular => 0,
                MapMode::Linear => self.n - 1,
            },
        }
    }
}

/// Rescale to unit l2 norm. Errors on all-zero input.
pub fn normalize_field(field: &ComplexField) -> Result<ComplexField> {
    let norm = field.norm();
    if norm == 0.0 {
        return Err(Error::ZeroInput("cannot normalize a zero field".into()));
    }
    let mut out = field.clone();
    out.values.mapv_inplace(|v| v / norm);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_field(grid: Grid, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexField::from_fn(grid, |_, _| c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
    }

    /// Direct O(d^2) evaluation of the unitary DFT, the independent oracle
    /// for the FFT-backed implementation.
    fn dft2_direct(field: &ComplexField, direction: DftDirection) -> ComplexField {
        let n = field.grid.n();
        let sign = match direction {
            DftDirection::Forward => -1.0,
            DftDirection::Inverse => 1.0,
        };
        let mut out = ComplexField::zeros(field.grid);
        for k0 in 0..n {
            for k1 in 0..n {
                let mut acc = Complex64::default();
                for x0 in 0..n {
                    for x1 in 0..n {
                        let phase = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((k0 * x0 + k1 * x1) as f64)
                            / n as f64;
                        acc += field.values[x0 * n + x1] * Complex64::from_polar(1.0, phase);
                    }
                }
                out.values[k0 * n + k1] = acc / n as f64;
            }
        }
        out
    }

    #[test]
    fn make_grid_examples() {
        let g = Grid::new(51, 19.6e-6, Boundary::Linear).unwrap();
        assert_eq!(g.dim(), 2601);
        let g = Grid::new(2, 1.0, Boundary::Circular).unwrap();
        assert_eq!(g.dim(), 4);
        let g = Grid::new(16, 1.0, Boundary::Circular).unwrap();
        assert_eq!(g.dim(), 256);
    }

    #[test]
    fn make_grid_rejects_bad_input() {
        assert!(Grid::new(1, 1.0, Boundary::Circular).is_err());
        assert!(Grid::new(8, 0.0, Boundary::Circular).is_err());
        assert!(Grid::new(8, -1.0, Boundary::Linear).is_err());
    }

    #[test]
    fn dft_of_delta_is_constant() {
        let grid = Grid::new(8, 1.0, Boundary::Circular).unwrap();
        let mut f = ComplexField::zeros(grid);
        f.values[0] = c(1.0, 0.0);
        let out = dft2(&f, DftDirection::Forward).unwrap();
        for v in out.values.iter() {
            assert!((v - c(1.0 / 8.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn dft_roundtrip_is_identity() {
        let grid = Grid::new(16, 1.0, Boundary::Circular).unwrap();
        let f = random_field(grid, 7);
        let back = dft2(&dft2(&f, DftDirection::Forward).unwrap(), DftDirection::Inverse).unwrap();
        let max_err = f
            .values
            .iter()
            .zip(back.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-12, "roundtrip max error {max_err}");
    }

    #[test]
    fn dft_matches_direct_sum_oracle() {
        for n in [2usize, 4, 5, 8] {
            let grid = Grid::new(n, 1.0, Boundary::Circular).unwrap();
            let f = random_field(grid, 40 + n as u64);
            for dir in [DftDirection::Forward, DftDirection::Inverse] {
                let fast = dft2(&f, dir).unwrap();
                let slow = dft2_direct(&f, dir);
                let max_err = fast
                    .values
                    .iter()
                    .zip(slow.values.iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(max_err <= 1e-12, "n={n} dir={dir:?} max error {max_err}");
            }
        }
    }

    #[test]
    fn dft_rejects_linear_grid() {
        let grid = Grid::new(8, 1.0, Boundary::Linear).unwrap();
        let f = ComplexField::zeros(grid);
        assert!(matches!(dft2(&f, DftDirection::Forward), Err(Error::BoundaryMismatch(_))));
    }

    #[test]
    fn sum_map_examples() {
        let grid = Grid::new(4, 1.0, Boundary::Circular).unwrap();
        let m = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).unwrap();
        assert_eq!(m.bin_axis(3, 2), 1);
        let lin_grid = Grid::new(4, 1.0, Boundary::Linear).unwrap();
        let m = SumCoordinateMap::new(&lin_grid, MapMode::Linear, MapSign::Sum).unwrap();
        assert_eq!(m.out_side(), 7);
        assert_eq!(m.bin_axis(3, 2), 5);
        let m = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Difference).unwrap();
        assert_eq!(m.bin_axis(1, 3), 2);
    }

    #[test]
    fn circular_map_requires_circular_grid() {
        let grid = Grid::new(4, 1.0, Boundary::Linear).unwrap();
        assert!(SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).is_err());
        // linear map on a circular grid is allowed
        let grid = Grid::new(4, 1.0, Boundary::Circular).unwrap();
        assert!(SumCoordinateMap::new(&grid, MapMode::Linear, MapSign::Sum).is_ok());
    }

    #[test]
    fn circular_sum_fixed_i_is_bijection_in_j() {
        let grid = Grid::new(5, 1.0, Boundary::Circular).unwrap();
        let m = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).unwrap();
        for i in 0..5 {
            for b in 0..5 {
                let count = (0..5).filter(|&j| m.bin_axis(i, j) == b).count();
                assert_eq!(count, 1, "i={i} bin={b}");
            }
        }
    }

    #[test]
    fn normalize_three_four_five() {
        let grid = Grid::new(2, 1.0, Boundary::Circular).unwrap();
        let f = ComplexField::new(
            grid,
            Array1::from(vec![c(3.0, 0.0), c(4.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
        )
        .unwrap();
        let out = normalize_field(&f).unwrap();
        assert!((out.values[0] - c(0.6, 0.0)).norm() < 1e-15);
        assert!((out.values[1] - c(0.8, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn normalize_is_idempotent_and_rejects_zero() {
        let grid = Grid::new(4, 1.0, Boundary::Circular).unwrap();
        let f = normalize_field(&random_field(grid, 3)).unwrap();
        let again = normalize_field(&f).unwrap();
        let drift = f
            .values
            .iter()
            .zip(again.values.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(drift <= 1e-15);
        assert!(matches!(normalize_field(&ComplexField::zeros(grid)), Err(Error::ZeroInput(_))));
    }

    #[test]
    fn flatten_roundtrip_exact() {
        let grid = Grid::new(7, 1.0, Boundary::Circular).unwrap();
        for idx in 0..grid.dim() {
            let (a, b) = grid.unflatten(idx);
            assert_eq!(grid.flatten(a, b), idx);
        }
    }

    proptest::proptest! {
        #[test]
        fn dft_is_unitary(seed in 0u64..500) {
            let grid = Grid::new(12, 1.0, Boundary::Circular).unwrap();
            let f = random_field(grid, seed);
            let out = dft2(&f, DftDirection::Forward).unwrap();
            let rel = (out.norm() - f.norm()).abs() / f.norm();
            proptest::prop_assert!(rel <= 1e-12);
        }
    }
}
