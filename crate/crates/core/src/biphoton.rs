//! Two-photon state construction: object-encoded input states, crystal-plane
//! states, double-Gaussian guide states, difference-coordinate encodings and
//! the separable mixed ensembles that reproduce their correlation images
//! without entanglement.
//!
//! All pure states are built as d-by-d matrices over a flattened grid, with
//! entry (i, s) = psi(r_i, r_s), unit Frobenius norm and exchange symmetry
//! psi(r_i, r_s) = psi(r_s, r_i).

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{dft2_inplace, Boundary, ComplexField, DftDirection, Grid};

/// Phase-matching profile of the crystal along the minus coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseMatchProfile {
    Gaussian,
    Sinc,
}

/// Source parameters: pump wavelength inside the crystal, crystal thickness
/// and the position/momentum correlation widths they imply.
#[derive(Debug, Clone, Copy)]
pub struct SpdcParams {
    pub lambda_p: f64,
    pub crystal_length: f64,
    pub sigma_r: f64,
    pub sigma_k: f64,
    pub profile: PhaseMatchProfile,
}

impl SpdcParams {
    /// Build from measured correlation widths; the crystal length is derived
    /// from sigma_r = sqrt(2 L lambda_p / (3 pi)).
    pub fn from_widths(sigma_r: f64, sigma_k: f64, lambda_p: f64) -> Result<Self> {
        if !(lambda_p > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda_p must be positive, got {lambda_p}")));
        }
        if sigma_r < 0.0 || sigma_k < 0.0 {
            return Err(Error::InvalidParameter("correlation widths must be nonnegative".into()));
        }
        let crystal_length = 3.0 * std::f64::consts::PI * sigma_r * sigma_r / (2.0 * lambda_p);
        Ok(SpdcParams {
            lambda_p,
            crystal_length,
            sigma_r,
            sigma_k,
            profile: PhaseMatchProfile::Gaussian,
        })
    }

    /// Build from the crystal geometry; sigma_r is derived from L.
    pub fn from_crystal(crystal_length: f64, lambda_p: f64, sigma_k: f64) -> Result<Self> {
        if !(crystal_length > 0.0) || !(lambda_p > 0.0) {
            return Err(Error::InvalidParameter("crystal length and lambda_p must be positive".into()));
        }
        let sigma_r = (2.0 * crystal_length * lambda_p / (3.0 * std::f64::consts::PI)).sqrt();
        Ok(SpdcParams { lambda_p, crystal_length, sigma_r, sigma_k, profile: PhaseMatchProfile::Gaussian })
    }

    /// Full constructor; checks that sigma_r and L are mutually consistent.
    pub fn new(
        lambda_p: f64,
        crystal_length: f64,
        sigma_r: f64,
        sigma_k: f64,
        profile: PhaseMatchProfile,
    ) -> Result<Self> {
        let derived = (2.0 * crystal_length * lambda_p / (3.0 * std::f64::consts::PI)).sqrt();
        if sigma_r > 0.0 && (derived - sigma_r).abs() > 1e-6 * sigma_r {
            return Err(Error::InvalidParameter(format!(
                "sigma_r = {sigma_r:.4e} inconsistent with sqrt(2 L lambda_p / 3 pi) = {derived:.4e}"
            )));
        }
        Ok(SpdcParams { lambda_p, crystal_length, sigma_r, sigma_k, profile })
    }

    pub fn with_profile(mut self, profile: PhaseMatchProfile) -> Self {
        self.profile = profile;
        self
    }

    /// Minus-coordinate momentum-space factor at squared wavenumber k2:
    /// sinc(a k2) for the sinc profile, exp(-sigma_r^2 k2 / 4) for Gaussian.
    pub fn phase_match_symbol(&self, k2: f64) -> f64 {
        match self.profile {
            PhaseMatchProfile::Gaussian => (-self.sigma_r * self.sigma_r * k2 / 4.0).exp(),
            PhaseMatchProfile::Sinc => {
                let a = self.crystal_length * self.lambda_p / (4.0 * std::f64::consts::PI);
                let x = a * k2;
                if x.abs() < 1e-30 {
                    1.0
                } else {
                    x.sin() / x
                }
            }
        }
    }
}

/// The measured source profile used across the artifact: sigma_r = 13 um,
/// sigma_k = 4.7e3 1/m, pump at 402 nm (photons at 804 nm).
pub fn paper_default_spdc() -> SpdcParams {
    SpdcParams::from_widths(13e-6, 4.7e3, 402e-9).expect("valid defaults")
}

/// Focal lengths and magnifications of the imaging chain.
#[derive(Debug, Clone, Copy)]
pub struct OpticalConfig {
    /// Focal lengths f0..f5 in meters.
    pub f: [f64; 6],
    /// Photon wavelength (signal/idler), meters.
    pub lambda: f64,
    /// Input-plane to output-plane magnification.
    pub m_prime: f64,
    /// Crystal-plane to SLM-plane magnification.
    pub m_dprime: f64,
    /// Crystal-plane to medium-plane magnification, stored for completeness.
    pub m_tprime: f64,
}

impl OpticalConfig {
    pub fn new(f: [f64; 6], lambda: f64) -> Result<Self> {
        if f.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("all focal lengths must be positive".into()));
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter("wavelength must be positive".into()));
        }
        Ok(OpticalConfig { f, lambda, m_prime: 1.0, m_dprime: 1.0, m_tprime: 1.0 })
    }

    /// Encoding magnification M = 2 f1 / f0, always recomputed.
    pub fn magnification(&self) -> f64 {
        2.0 * self.f[1] / self.f[0]
    }

    pub fn f1(&self) -> f64 {
        self.f[1]
    }
}

/// Bench values: f0 = 75 mm so that M = 2 f1/f0 = 0.93, f1 = 35 mm,
/// photons at 804 nm, M' = 0.83, M'' = 4.3, M''' = 1.6.
pub fn paper_default_optics() -> OpticalConfig {
    let mut cfg = OpticalConfig::new([75e-3, 35e-3, 125e-3, 200e-3, 75e-3, 125e-3], 804e-9)
        .expect("valid defaults");
    cfg.m_prime = 0.83;
    cfg.m_dprime = 4.3;
    cfg.m_tprime = 1.6;
    cfg
}

/// Unit-magnification configuration for dimensionless desk-scale runs
/// (f0 = 2 f1 makes M = 1).
pub fn desk_optics() -> OpticalConfig {
    OpticalConfig::new([70e-3, 35e-3, 125e-3, 200e-3, 75e-3, 125e-3], 804e-9).expect("valid")
}

/// Real nonnegative transmission object t(r) in [0, 1].
#[derive(Debug, Clone)]
pub struct ObjectImage {
    pub grid: Grid,
    pub values: Array2<f64>,
}

impl ObjectImage {
    pub fn new(grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n(), grid.n()) {
            return Err(Error::DimensionMismatch(format!(
                "object {}x{} does not match grid n = {}",
                values.nrows(),
                values.ncols(),
                grid.n()
            )));
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidParameter("object transmission must lie in [0, 1]".into()));
        }
        Ok(ObjectImage { grid, values })
    }

    pub fn uniform(grid: Grid, value: f64) -> Result<Self> {
        Self::new(grid, Array2::from_elem((grid.n(), grid.n()), value))
    }

    /// Single transparent pixel.
    pub fn point(grid: Grid, at: (usize, usize)) -> Result<Self> {
        let mut values = Array2::zeros((grid.n(), grid.n()));
        values[at] = 1.0;
        Self::new(grid, values)
    }

    /// Binary digit '8': two stacked rectangular loops centered on the grid.
    pub fn digit_eight(grid: Grid) -> Self {
        let n = grid.n();
        let mut values = Array2::zeros((n, n));
        let h = (n as f64 * 0.56).round() as usize; // total glyph height
        let w = (n as f64 * 0.34).round() as usize; // glyph width
        let h = (h.max(7) | 1).min(if n % 2 == 0 { n - 1 } else { n }); // odd waist line
        let w = w.max(5).min(n);
        let top = (n - h) / 2;
        let left = (n - w) / 2;
        let mid = top + h / 2;
        for r in top..top + h {
            for c in left..left + w {
                let on_outline = r == top || r == top + h - 1 || c == left || c == left + w - 1;
                let on_waist = r == mid;
                if on_outline || on_waist {
                    values[[r, c]] = 1.0;
                }
            }
        }
        ObjectImage { grid, values }
    }

    /// Seeded random binary pattern with the given fill fraction.
    pub fn random_binary(grid: Grid, fill: f64, seed: u64) -> Self {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = grid.n();
        let values =
            Array2::from_shape_fn((n, n), |_| if rng.gen::<f64>() < fill { 1.0 } else { 0.0 });
        ObjectImage { grid, values }
    }

    /// Load from an 8-bit or 16-bit PGM (P5), rescaled to [0, 1]; a threshold
    /// (if given) binarizes the result.
    pub fn from_pgm(path: &std::path::Path, pitch: f64, boundary: Boundary, threshold: Option<f64>) -> Result<Self> {
        let img = crate::io::read_pgm(path)?;
        if img.nrows() != img.ncols() {
            return Err(Error::Format(format!(
                "object PGM must be square, got {}x{}",
                img.nrows(),
                img.ncols()
            )));
        }
        let grid = Grid::new(img.nrows(), pitch, boundary)?;
        let values = match threshold {
            Some(th) => img.mapv(|v| if v >= th { 1.0 } else { 0.0 }),
            None => img,
        };
        Self::new(grid, values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Intensity image |t|^2.
    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v * v)
    }
}

/// Per-axis object lookup index for the sum-coordinate argument
/// t((r_i + r_s)/M): index = c + round((i + s - 2c)/M), wrapped on circular
/// grids, None (treated as t = 0) outside linear grids.
fn sum_lookup_axis(grid: &Grid, i: usize, s: usize, m_scale: f64) -> Option<usize> {
    let n = grid.n() as isize;
    let c = grid.center() as isize;
    let raw = i as isize + s as isize - 2 * c;
    let scaled = (raw as f64 / m_scale).round() as isize + c;
    match grid.boundary() {
        Boundary::Circular => Some(scaled.rem_euclid(n) as usize),
        Boundary::Linear => (0..n).contains(&scaled).then_some(scaled as usize),
    }
}

/// Per-axis lookup for the difference-coordinate argument t(r_i - r_s).
fn diff_lookup_axis(grid: &Grid, i: usize, s: usize) -> Option<usize> {
    let n = grid.n() as isize;
    let c = grid.center() as isize;
    let idx = i as isize - s as isize + c;
    match grid.boundary() {
        Boundary::Circular => Some(idx.rem_euclid(n) as usize),
        Boundary::Linear => (0..n).contains(&idx).then_some(idx as usize),
    }
}

fn object_at(object: &ObjectImage, idx: Option<(usize, usize)>) -> f64 {
    match idx {
        Some(p) => object.values[p],
        None => 0.0,
    }
}

/// Pure two-photon state: dense d-by-d matrix, entry (i, s) = psi(r_i, r_s),
/// unit Frobenius norm.
#[derive(Debug, Clone)]
pub struct TwoPhotonPure {
    pub grid: Grid,
    pub psi: Array2<Complex64>,
}

impl TwoPhotonPure {
    /// Normalize and wrap a raw matrix. Errors on a zero or non-finite input.
    pub fn from_unnormalized(grid: Grid, mut psi: Array2<Complex64>) -> Result<Self> {
        let d = grid.dim();
        if psi.dim() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "psi {}x{} does not match grid d = {d}",
                psi.nrows(),
                psi.ncols()
            )));
        }
        if psi.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("two-photon matrix".into()));
        }
        let norm = frobenius(&psi);
        if norm == 0.0 {
            return Err(Error::ZeroInput("two-photon state is identically zero".into()));
        }
        psi.mapv_inplace(|v| v / norm);
        Ok(TwoPhotonPure { grid, psi })
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.psi)
    }

    /// Renormalized copy (unit Frobenius norm).
    pub fn normalized(&self) -> Result<Self> {
        Self::from_unnormalized(self.grid, self.psi.clone())
    }

    /// Largest |psi(i, s) - psi(s, i)|, the exchange-symmetry defect.
    pub fn exchange_asymmetry(&self) -> f64 {
        let d = self.psi.nrows();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for s in (i + 1)..d {
                worst = worst.max((self.psi[[i, s]] - self.psi[[s, i]]).norm());
            }
        }
        worst
    }

    /// Entry by grid-point pairs.
    pub fn at(&self, i: (usize, usize), s: (usize, usize)) -> Complex64 {
        self.psi[[self.grid.flatten(i.0, i.1), self.grid.flatten(s.0, s.1)]]
    }
}

pub(crate) fn frobenius(m: &Array2<Complex64>) -> f64 {
    m.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// One separable component of a mixed ensemble: weight * |phi><phi| (x) |chi><chi|.
#[derive(Debug, Clone)]
pub struct MixedComponent {
    pub weight: f64,
    pub factor_i: Array1<Complex64>,
    pub factor_s: Array1<Complex64>,
}

/// Ensemble of weighted separable factor pairs realizing the classically
/// correlated states rho_0 and rho_t.
#[derive(Debug, Clone)]
pub struct TwoPhotonMixed {
    pub grid: Grid,
    pub components: Vec<MixedComponent>,
}

impl TwoPhotonMixed {
    pub fn weight_sum(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }
}

/// Pump field at the crystal plane: centered unitary DFT of the object
/// weighted by a Gaussian beam of the given waist (amplitude exp(-|r|^2/w^2)),
/// normalized. An infinite waist leaves the object unweighted.
pub fn pump_from_object(object: &ObjectImage, waist: f64, cfg: &OpticalConfig) -> Result<ComplexField> {
    if object.is_zero() {
        return Err(Error::ZeroInput("object is identically zero".into()));
    }
    if !(waist > 0.0) {
        return Err(Error::InvalidParameter(format!("waist must be positive, got {waist}")));
    }
    let grid = object.grid;
    if grid.boundary() != Boundary::Circular {
        return Err(Error::BoundaryMismatch("pump shaping uses the grid DFT".into()));
    }
    let n = grid.n();
    let illuminated = ComplexField::from_fn(grid, |a, b| {
        let r2 = grid.coord(a).powi(2) + grid.coord(b).powi(2);
        let g = if waist.is_infinite() { 1.0 } else { (-r2 / (waist * waist)).exp() };
        Complex64::new(object.values[[a, b]] * g, 0.0)
    });
    // Centered transform: pre/post phase ramps around the uncentered DFT so a
    // constant input focuses on the center pixel.
    let mut buf = illuminated.values.to_vec();
    apply_center_ramps(&mut buf, n, true);
    dft2_inplace(&mut buf, n, DftDirection::Forward);
    apply_center_ramps(&mut buf, n, true);
    fix_center_phase(&mut buf, n);
    // The lens f0 maps the object plane to the crystal plane with pitch
    // lambda_p * f0 / (n * pitch).
    let lambda_p = cfg.lambda / 2.0;
    let out_pitch = lambda_p * cfg.f[0] / (n as f64 * grid.pitch());
    let out_grid = Grid::new(n, out_pitch, Boundary::Circular)?;
    let field = ComplexField::new(out_grid, Array1::from(buf))?;
    crate::lattice::normalize_field(&field)
}

/// Multiply by the phase ramps that re-center the DFT: with c = n/2 the
/// composite equals the centered kernel exp(-2 pi i (p - c)(q - c)/n) up to
/// the global phase exp(-2 pi i c^2 (...)/n) removed by `fix_center_phase`.
fn apply_center_ramps(buf: &mut [Complex64], n: usize, forward: bool) {
    let c = (n / 2) as f64;
    let sign = if forward { 1.0 } else { -1.0 };
    for a in 0..n {
        for b in 0..n {
            let phase = sign * 2.0 * std::f64::consts::PI * c * (a as f64 + b as f64) / n as f64;
            buf[a * n + b] *= Complex64::from_polar(1.0, phase);
        }
    }
}

fn fix_center_phase(buf: &mut [Complex64], n: usize) {
    let c = (n / 2) as f64;
    let phase = -2.0 * std::f64::consts::PI * 2.0 * c * c / n as f64;
    let rot = Complex64::from_polar(1.0, phase);
    for v in buf.iter_mut() {
        *v *= rot;
    }
}

/// Two-photon state at the crystal plane:
/// psi_c(r_i, r_s) = E_p(r_i + r_s) * w(r_i - r_s), where w is the Gaussian
/// exp(-|r_i - r_s|^2 / sigma_r^2) or the sinc phase-matching profile
/// evaluated in the conjugate coordinate. sigma_r = 0 collapses the Gaussian
/// to a Kronecker delta.
pub fn crystal_state(pump: &ComplexField, p: &SpdcParams) -> Result<TwoPhotonPure> {
    let grid = pump.grid;
    let n = grid.n();
    let d = grid.dim();

    let minus_factor: Box<dyn Fn((usize, usize), (usize, usize)) -> f64> = match p.profile {
        PhaseMatchProfile::Gaussian => {
            let sigma_r = p.sigma_r;
            Box::new(move |i, s| {
                if sigma_r == 0.0 {
                    if i == s {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (-grid.dist2(i, s) / (sigma_r * sigma_r)).exp()
                }
            })
        }
        PhaseMatchProfile::Sinc => {
            if !(p.crystal_length > 0.0) || !(p.lambda_p > 0.0) {
                return Err(Error::InvalidParameter(
                    "sinc profile needs crystal_length and lambda_p".into(),
                ));
            }
            if grid.boundary() != Boundary::Circular {
                return Err(Error::BoundaryMismatch("sinc profile uses the grid DFT".into()));
            }
            let w = sinc_minus_kernel(&grid, p);
            Box::new(move |i, s| {
                let da = (i.0 as isize - s.0 as isize).rem_euclid(n as isize) as usize;
                let db = (i.1 as isize - s.1 as isize).rem_euclid(n as isize) as usize;
                w[[da, db]]
            })
        }
    };

    let mut psi = Array2::zeros((d, d));
    for (i_flat, i) in grid.points().enumerate() {
        for (s_flat, s) in grid.points().enumerate() {
            let sum_idx = (
                sum_lookup_axis(&grid, i.0, s.0, 1.0),
                sum_lookup_axis(&grid, i.1, s.1, 1.0),
            );
            let ep = match (sum_idx.0, sum_idx.1) {
                (Some(a), Some(b)) => pump.values[grid.flatten(a, b)],
                _ => Complex64::default(),
            };
            psi[[i_flat, s_flat]] = ep * minus_factor(i, s);
        }
    }
    TwoPhotonPure::from_unnormalized(grid, psi)
}

/// Real-space minus-coordinate kernel from the sampled sinc symbol: inverse
/// DFT of sinc(a |k|^2) over the grid's wavenumber lattice.
fn sinc_minus_kernel(grid: &Grid, p: &SpdcParams) -> Array2<f64> {
    let n = grid.n();
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * grid.pitch());
    let mut sym = vec![Complex64::default(); n * n];
    for fa in 0..n {
        for fb in 0..n {
            let ka = signed_freq(fa, n) * dk;
            let kb = signed_freq(fb, n) * dk;
            sym[fa * n + fb] = Complex64::new(p.phase_match_symbol(ka * ka + kb * kb), 0.0);
        }
    }
    dft2_inplace(&mut sym, n, DftDirection::Inverse);
    // Even symbol -> real kernel; drop rounding-level imaginary parts.
    Array2::from_shape_fn((n, n), |(a, b)| sym[a * n + b].re)
}

fn signed_freq(f: usize, n: usize) -> f64 {
    if f <= n / 2 {
        f as f64
    } else {
        f as f64 - n as f64
    }
}

/// Object-encoded input-plane state (the quantum image encoding):
/// psi_in(r_i, r_s) = t((r_i + r_s)/M) * exp(-|r_i - r_s|^2 pi^2 sigma_r^2 /
/// (4 lambda_p^2 f1^2)), normalized. sigma_r = 0 makes the Gaussian exactly 1.
pub fn input_plane_state(
    object: &ObjectImage,
    p: &SpdcParams,
    cfg: &OpticalConfig,
) -> Result<TwoPhotonPure> {
    if object.is_zero() {
        return Err(Error::ZeroInput("object is identically zero".into()));
    }
    let m_scale = cfg.magnification();
    if m_scale == 0.0 || !m_scale.is_finite() {
        return Err(Error::InvalidParameter(format!("magnification M = {m_scale}")));
    }
    let grid = object.grid;
    let beta = minus_gaussian_rate(p, cfg);
    build_sum_encoded(grid, object, m_scale, beta)
}

/// pi^2 sigma_r^2 / (4 lambda_p^2 f1^2), the minus-coordinate Gaussian rate
/// of the input-plane encoding; its 1/e amplitude width is 2 lambda_p f1 /
/// (pi sigma_r).
pub fn minus_gaussian_rate(p: &SpdcParams, cfg: &OpticalConfig) -> f64 {
    let pi = std::f64::consts::PI;
    (pi * pi * p.sigma_r * p.sigma_r) / (4.0 * p.lambda_p * p.lambda_p * cfg.f1() * cfg.f1())
}

fn build_sum_encoded(grid: Grid, object: &ObjectImage, m_scale: f64, beta: f64) -> Result<TwoPhotonPure> {
    let d = grid.dim();
    let mut psi = Array2::zeros((d, d));
    for (i_flat, i) in grid.points().enumerate() {
        for (s_flat, s) in grid.points().enumerate() {
            let ta = sum_lookup_axis(&grid, i.0, s.0, m_scale);
            let tb = sum_lookup_axis(&grid, i.1, s.1, m_scale);
            let t = object_at(object, ta.zip(tb));
            if t == 0.0 {
                continue;
            }
            let gauss = (-grid.dist2(i, s) * beta).exp();
            psi[[i_flat, s_flat]] = Complex64::new(t * gauss, 0.0);
        }
    }
    TwoPhotonPure::from_unnormalized(grid, psi)
}

/// Double-Gaussian guide state at a plane with the given magnification from
/// the crystal:
/// psi(r_i, r_s) = exp(-(sigma_k/m)^2 |r_i + r_s|^2) * exp(-|r_i - r_s|^2 /
/// (m sigma_r)^2).
pub fn guide_state(grid: Grid, p: &SpdcParams, magnification: f64) -> Result<TwoPhotonPure> {
    if !(p.sigma_r > 0.0) {
        return Err(Error::InvalidParameter("guide state needs sigma_r > 0".into()));
    }
    if p.sigma_k < 0.0 || !(magnification > 0.0) {
        return Err(Error::InvalidParameter("guide state needs sigma_k >= 0 and m > 0".into()));
    }
    let d = grid.dim();
    let plus_rate = (p.sigma_k / magnification).powi(2);
    let minus_w = magnification * p.sigma_r;
    let mut psi = Array2::zeros((d, d));
    for (i_flat, i) in grid.points().enumerate() {
        for (s_flat, s) in grid.points().enumerate() {
            let xp = grid.coord(i.0) + grid.coord(s.0);
            let yp = grid.coord(i.1) + grid.coord(s.1);
            let plus = (-(xp * xp + yp * yp) * plus_rate).exp();
            let minus = (-grid.dist2(i, s) / (minus_w * minus_w)).exp();
            psi[[i_flat, s_flat]] = Complex64::new(plus * minus, 0.0);
        }
    }
    TwoPhotonPure::from_unnormalized(grid, psi)
}

/// Alternative encoding in the difference coordinate:
/// psi(r_i, r_s) = t(r_i - r_s) * exp(-|r_i + r_s|^2 sigma_k^2 / 4).
///
/// Exchange symmetry holds only for centrosymmetric objects (t(-x) = t(x));
/// a generic t produces the one-sided band the formula dictates.
pub fn difference_encoded_state(object: &ObjectImage, p: &SpdcParams) -> Result<TwoPhotonPure> {
    if object.is_zero() {
        return Err(Error::ZeroInput("object is identically zero".into()));
    }
    let grid = object.grid;
    let d = grid.dim();
    let rate = p.sigma_k * p.sigma_k / 4.0;
    let mut psi = Array2::zeros((d, d));
    for (i_flat, i) in grid.points().enumerate() {
        for (s_flat, s) in grid.points().enumerate() {
            let ta = diff_lookup_axis(&grid, i.0, s.0);
            let tb = diff_lookup_axis(&grid, i.1, s.1);
            let t = object_at(object, ta.zip(tb));
            if t == 0.0 {
                continue;
            }
            let xp = grid.coord(i.0) + grid.coord(s.0);
            let yp = grid.coord(i.1) + grid.coord(s.1);
            let plus = (-(xp * xp + yp * yp) * rate).exp();
            psi[[i_flat, s_flat]] = Complex64::new(t * plus, 0.0);
        }
    }
    TwoPhotonPure::from_unnormalized(grid, psi)
}

/// Separable mixed state rho_0 reproducing the guide state's correlation
/// image: one component per grid point R, with
/// phi_R(r_i) = exp(-pi^2 |r_i + R|^2 / (4 lambda_p^2 f1^2 sigma_k^2)) *
///              exp(-|r_i - R|^2 pi^2 sigma_r^2 / (4 lambda_p^2 f1^2)),
/// chi_R = Kronecker delta at R, uniform weights 1/d.
pub fn separable_guide_ensemble(
    grid: Grid,
    p: &SpdcParams,
    cfg: &OpticalConfig,
) -> Result<TwoPhotonMixed> {
    if !(p.sigma_k > 0.0) {
        return Err(Error::InvalidParameter("guide ensemble needs sigma_k > 0".into()));
    }
    let pi = std::f64::consts::PI;
    let lf = p.lambda_p * cfg.f1();
    let plus_rate = pi * pi / (4.0 * lf * lf * p.sigma_k * p.sigma_k);
    let minus_rate = minus_gaussian_rate(p, cfg);
    build_delta_ensemble(grid, |x, r| {
        let xp0 = x.0 + r.0;
        let xp1 = x.1 + r.1;
        let dm0 = x.0 - r.0;
        let dm1 = x.1 - r.1;
        (-(xp0 * xp0 + xp1 * xp1) * plus_rate - (dm0 * dm0 + dm1 * dm1) * minus_rate).exp()
    })
}

/// Separable mixed state rho_t reproducing the object-encoded correlation
/// image: phi_R(r_i) = t((r_i + R)/M) * exp(-|r_i - R|^2 pi^2 sigma_r^2 /
/// (4 lambda_p^2 f1^2)), chi_R = delta at R.
pub fn separable_object_ensemble(
    object: &ObjectImage,
    p: &SpdcParams,
    cfg: &OpticalConfig,
) -> Result<TwoPhotonMixed> {
    if object.is_zero() {
        return Err(Error::ZeroInput("object is identically zero".into()));
    }
    let grid = object.grid;
    let m_scale = cfg.magnification();
    let minus_rate = minus_gaussian_rate(p, cfg);
    let d = grid.dim();
    let mut components = Vec::with_capacity(d);
    for r_pt in grid.points() {
        let mut phi = Array1::zeros(d);
        for (i_flat, i) in grid.points().enumerate() {
            let ta = sum_lookup_axis(&grid, i.0, r_pt.0, m_scale);
            let tb = sum_lookup_axis(&grid, i.1, r_pt.1, m_scale);
            let t = object_at(object, ta.zip(tb));
            if t == 0.0 {
                continue;
            }
            let g = (-grid.dist2(i, r_pt) * minus_rate).exp();
            phi[i_flat] = Complex64::new(t * g, 0.0);
        }
        let mut chi = Array1::zeros(d);
        chi[grid.flatten(r_pt.0, r_pt.1)] = Complex64::new(1.0, 0.0);
        components.push(MixedComponent { weight: 1.0 / d as f64, factor_i: phi, factor_s: chi });
    }
    Ok(TwoPhotonMixed { grid, components })
}

fn build_delta_ensemble(
    grid: Grid,
    phi_fn: impl Fn((f64, f64), (f64, f64)) -> f64,
) -> Result<TwoPhotonMixed> {
    let d = grid.dim();
    let mut components = Vec::with_capacity(d);
    for r_pt in grid.points() {
        let rx = (grid.coord(r_pt.0), grid.coord(r_pt.1));
        let mut phi = Array1::zeros(d);
        for (i_flat, i) in grid.points().enumerate() {
            let xi = (grid.coord(i.0), grid.coord(i.1));
            phi[i_flat] = Complex64::new(phi_fn(xi, rx), 0.0);
        }
        let mut chi = Array1::zeros(d);
        chi[grid.flatten(r_pt.0, r_pt.1)] = Complex64::new(1.0, 0.0);
        components.push(MixedComponent { weight: 1.0 / d as f64, factor_i: phi, factor_s: chi });
    }
    Ok(TwoPhotonMixed { grid, components })
}
