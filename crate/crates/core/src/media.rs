//! Linear-operator factory: speckle media (thin and thick), SLM phase
//! diagonals, Fourier-lens operators, the analytic image-preserving
//! solutions, system composition, and triviality/kernel diagnostics.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::lattice::{dft2_inplace, Boundary, ComplexField, DftDirection, Grid};

/// Provenance label of a scattering operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Thin,
    Thick,
    Slm,
    Lens,
    SignSolution,
    PcpSolution,
    Composed,
    Measured,
    Identity,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Thin => "thin",
            Tag::Thick => "thick",
            Tag::Slm => "slm",
            Tag::Lens => "lens",
            Tag::SignSolution => "sign-solution",
            Tag::PcpSolution => "pcp-solution",
            Tag::Composed => "composed",
            Tag::Measured => "measured",
            Tag::Identity => "identity",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "thin" => Tag::Thin,
            "thick" => Tag::Thick,
            "slm" => Tag::Slm,
            "lens" => Tag::Lens,
            "sign-solution" => Tag::SignSolution,
            "pcp-solution" => Tag::PcpSolution,
            "composed" => Tag::Composed,
            "measured" => Tag::Measured,
            "identity" => Tag::Identity,
            other => return Err(Error::Format(format!("unknown tag {other:?}"))),
        })
    }
}

/// Complex out-by-in operator over flattened grids.
#[derive(Debug, Clone)]
pub struct ScatteringMatrix {
    pub grid_in: Grid,
    pub grid_out: Grid,
    pub m: Array2<Complex64>,
    pub tag: Tag,
}

impl ScatteringMatrix {
    pub fn new(grid_in: Grid, grid_out: Grid, m: Array2<Complex64>, tag: Tag) -> Result<Self> {
        if m.dim() != (grid_out.dim(), grid_in.dim()) {
            return Err(Error::DimensionMismatch(format!(
                "matrix {}x{} does not match out d = {}, in d = {}",
                m.nrows(),
                m.ncols(),
                grid_out.dim(),
                grid_in.dim()
            )));
        }
        if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("scattering matrix entries".into()));
        }
        Ok(ScatteringMatrix { grid_in, grid_out, m, tag })
    }

    pub fn identity(grid: Grid) -> Self {
        ScatteringMatrix { grid_in: grid, grid_out: grid, m: Array2::eye(grid.dim()), tag: Tag::Identity }
    }

    pub fn dim_in(&self) -> usize {
        self.grid_in.dim()
    }

    pub fn dim_out(&self) -> usize {
        self.grid_out.dim()
    }

    pub fn save_biph1(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_biph1(path, &self.m, self.tag.as_str())
    }

    pub fn load_biph1(path: &std::path::Path, grid_in: Grid, grid_out: Grid) -> Result<Self> {
        let (m, tag) = crate::io::read_biph1(path)?;
        Self::new(grid_in, grid_out, m, Tag::from_str(&tag)?)
    }

    /// Largest deviation of S S^dagger from the identity, as a cheap
    /// unitarity probe on random vectors would be; used by tests.
    pub fn unitarity_defect(&self) -> f64 {
        let d = self.m.nrows();
        if d != self.m.ncols() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in i..d {
                let mut acc = Complex64::default();
                for k in 0..d {
                    acc += self.m[[i, k]] * self.m[[j, k]].conj();
                }
                let target = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::default() };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }
}

/// Parameters of a synthetic speckle: correlation length and (for thick
/// media) the Gaussian envelope width, both in pixels, plus the RNG seed.
#[derive(Debug, Clone, Copy)]
pub struct SpeckleSpec {
    pub corr_len: f64,
    pub envelope_sigma: Option<f64>,
    pub seed: u64,
}

impl SpeckleSpec {
    pub fn thin(corr_len: f64, seed: u64) -> Self {
        SpeckleSpec { corr_len, envelope_sigma: None, seed }
    }

    pub fn thick(corr_len: f64, envelope_sigma: f64, seed: u64) -> Self {
        SpeckleSpec { corr_len, envelope_sigma: Some(envelope_sigma), seed }
    }
}

/// Complex speckle with controllable correlation length: seeded complex
/// white noise low-passed by a DFT-domain Gaussian chosen so the intensity
/// autocorrelation FWHM is `corr_len` pixels; mean intensity normalized to 1.
pub fn speckle_field(grid: Grid, spec: &SpeckleSpec) -> Result<ComplexField> {
    speckle_field_seeded(grid, spec, spec.seed)
}

fn speckle_field_seeded(grid: Grid, spec: &SpeckleSpec, seed: u64) -> Result<ComplexField> {
    if grid.boundary() != Boundary::Circular {
        return Err(Error::BoundaryMismatch("speckle generation uses the grid DFT".into()));
    }
    let n = grid.n();
    if spec.corr_len < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "correlation length must be >= 1 pixel, got {}",
            spec.corr_len
        )));
    }
    if spec.corr_len >= n as f64 / 2.0 {
        return Err(Error::InvalidParameter(format!(
            "correlation length {} leaves no randomness on an n = {n} grid (needs l_s < n/2)",
            spec.corr_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    // |H(k)|^2 = exp(-|k|^2 / (2 beta)) gives an intensity autocorrelation
    // |mu|^2 = exp(-(2 pi / n)^2 beta |dx|^2) with FWHM l_s when
    // beta = (ln 2 / pi^2) (n / l_s)^2.
    let beta = (2.0_f64.ln() / (std::f64::consts::PI * std::f64::consts::PI))
        * (n as f64 / spec.corr_len).powi(2);
    for fa in 0..n {
        for fb in 0..n {
            let ka = signed_freq(fa, n);
            let kb = signed_freq(fb, n);
            let h = (-(ka * ka + kb * kb) / (4.0 * beta)).exp();
            buf[fa * n + fb] *= h;
        }
    }
    dft2_inplace(&mut buf, n, DftDirection::Inverse);
    let mean_intensity: f64 = buf.iter().map(|v| v.norm_sqr()).sum::<f64>() / (n * n) as f64;
    if mean_intensity == 0.0 {
        return Err(Error::ZeroInput("degenerate speckle draw".into()));
    }
    let scale = 1.0 / mean_intensity.sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
    ComplexField::new(grid, Array1::from(buf))
}

fn signed_freq(f: usize, n: usize) -> f64 {
    if f <= n / 2 {
        f as f64
    } else {
        f as f64 - n as f64
    }
}

/// Thin medium: the speckle field placed on the diagonal.
pub fn thin_medium(grid: Grid, spec: &SpeckleSpec) -> Result<ScatteringMatrix> {
    let field = speckle_field(grid, spec)?;
    thin_medium_from_field(&field)
}

/// Diagonal medium from an explicit field (also the unit-override path:
/// a constant-1 field gives the identity).
pub fn thin_medium_from_field(field: &ComplexField) -> Result<ScatteringMatrix> {
    let d = field.grid.dim();
    let mut m = Array2::zeros((d, d));
    for (j, v) in field.values.iter().enumerate() {
        m[[j, j]] = *v;
    }
    ScatteringMatrix::new(field.grid, field.grid, m, Tag::Thin)
}

/// Thick medium: column c is a fresh per-column speckle multiplied by a
/// Gaussian envelope of width `envelope_sigma` pixels centered (toroidally)
/// on the input pixel c, then unit-normalized. Deterministic per (seed, c)
/// regardless of construction order.
pub fn thick_medium(grid: Grid, spec: &SpeckleSpec) -> Result<ScatteringMatrix> {
    let sigma_px = spec
        .envelope_sigma
        .ok_or_else(|| Error::InvalidParameter("thick medium needs envelope_sigma".into()))?;
    if !(sigma_px > 0.0) {
        return Err(Error::InvalidParameter("envelope_sigma must be positive".into()));
    }
    let d = grid.dim();
    let mut m = Array2::zeros((d, d));
    for col in 0..d {
        let cq = grid.unflatten(col);
        let col_seed = spec.seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(col as u64);
        let speckle = speckle_field_seeded(grid, spec, col_seed)?;
        let mut column: Vec<Complex64> = Vec::with_capacity(d);
        for p in grid.points() {
            let dist2_px = grid.dist2_wrapped(p, cq) / (grid.pitch() * grid.pitch());
            let env = (-dist2_px / (2.0 * sigma_px * sigma_px)).exp();
            column.push(speckle.values[grid.flatten(p.0, p.1)] * env);
        }
        let norm = column.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for (row, v) in column.into_iter().enumerate() {
            m[[row, col]] = v / norm;
        }
    }
    ScatteringMatrix::new(grid, grid, m, Tag::Thick)
}

/// Circulant operator with DFT symbol sigma(k) = sign(g(k)): the analytic
/// transformation that restores sum-encoded images. Unitary by construction
/// (|sigma| = 1 everywhere). Rejects fields with exact zeros.
///
/// On linear-boundary grids the kernel is applied without wraparound
/// (an embedded zero-padded circulant); the operator is then only
/// approximately unitary near the edges.
pub fn sign_solution(grid: Grid, g: &Array2<f64>) -> Result<ScatteringMatrix> {
    if g.dim() != (grid.n(), grid.n()) {
        return Err(Error::DimensionMismatch(format!(
            "g is {}x{}, grid n = {}",
            g.nrows(),
            g.ncols(),
            grid.n()
        )));
    }
    if let Some((idx, _)) = g.iter().enumerate().find(|(_, v)| **v == 0.0) {
        return Err(Error::SignUndefined { index: idx });
    }
    let n = grid.n();
    let symbol = Array2::from_shape_fn((n, n), |p| {
        Complex64::new(if g[p] > 0.0 { 1.0 } else { -1.0 }, 0.0)
    });
    circulant_from_symbol(grid, &symbol, Tag::SignSolution)
}

/// Circulant operator with an arbitrary complex DFT symbol subject to
/// f(k) f(-k) = 1; the analytic solution class for difference-coordinate
/// encodings. The constraint is verified at construction (tolerance 1e-9).
pub fn pcp_solution(grid: Grid, f: &Array2<Complex64>) -> Result<ScatteringMatrix> {
    let n = grid.n();
    if f.dim() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "f is {}x{}, grid n = {}",
            f.nrows(),
            f.ncols(),
            n
        )));
    }
    let tol = 1e-9;
    let mut worst = 0.0_f64;
    let mut worst_k = (0usize, 0usize);
    for ka in 0..n {
        for kb in 0..n {
            let na = (n - ka) % n;
            let nb = (n - kb) % n;
            let prod = f[[ka, kb]] * f[[na, nb]];
            let err = (prod - Complex64::new(1.0, 0.0)).norm();
            if err > worst {
                worst = err;
                worst_k = (ka, kb);
            }
        }
    }
    if worst > tol {
        return Err(Error::SymbolConstraint { worst, k0: worst_k.0, k1: worst_k.1, tol });
    }
    circulant_from_symbol(grid, f, Tag::PcpSolution)
}

/// Random unit-modulus symbol with odd phase (phi(-k) = -phi(k)), a valid
/// pcp_solution input for any seed.
pub fn odd_phase_symbol(grid: &Grid, seed: u64) -> Array2<Complex64> {
    let n = grid.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phases = Array2::<f64>::zeros((n, n));
    for ka in 0..n {
        for kb in 0..n {
            let neg = ((n - ka) % n, (n - kb) % n);
            let this = (ka, kb);
            if this == neg {
                phases[this] = 0.0; // self-paired frequency must satisfy f^2 = 1
            } else if this < neg {
                let phi = rng.gen::<f64>() * 2.0 * std::f64::consts::PI - std::f64::consts::PI;
                phases[this] = phi;
                phases[neg] = -phi;
            }
        }
    }
    phases.mapv(|phi| Complex64::from_polar(1.0, phi))
}

/// C = F^dagger diag(symbol) F, materialized as the kernel circulant
/// C(r', r) = kappa(r' - r) with kappa the inverse DFT of the symbol / sqrt(d).
fn circulant_from_symbol(
    grid: Grid,
    symbol: &Array2<Complex64>,
    tag: Tag,
) -> Result<ScatteringMatrix> {
    let n = grid.n();
    let d = grid.dim();
    let mut kernel: Vec<Complex64> = symbol.iter().cloned().collect();
    dft2_inplace(&mut kernel, n, DftDirection::Inverse);
    let scale = 1.0 / (d as f64).sqrt();
    for v in kernel.iter_mut() {
        *v *= scale;
    }
    let mut m = Array2::zeros((d, d));
    match grid.boundary() {
        Boundary::Circular => {
            for (row, p) in grid.points().enumerate() {
                for (col, q) in grid.points().enumerate() {
                    let da = (p.0 as isize - q.0 as isize).rem_euclid(n as isize) as usize;
                    let db = (p.1 as isize - q.1 as isize).rem_euclid(n as isize) as usize;
                    m[[row, col]] = kernel[da * n + db];
                }
            }
        }
        Boundary::Linear => {
            let half = n as isize / 2;
            for (row, p) in grid.points().enumerate() {
                for (col, q) in grid.points().enumerate() {
                    let da = p.0 as isize - q.0 as isize;
                    let db = p.1 as isize - q.1 as isize;
                    if da < -half || da >= half.max(1) || db < -half || db >= half.max(1) {
                        continue;
                    }
                    let ia = da.rem_euclid(n as isize) as usize;
                    let ib = db.rem_euclid(n as isize) as usize;
                    m[[row, col]] = kernel[ia * n + ib];
                }
            }
        }
    }
    ScatteringMatrix::new(grid, grid, m, tag)
}

/// Extract the DFT symbol of a circulant operator from its first column.
pub fn circulant_symbol(s: &ScatteringMatrix) -> Result<Array2<Complex64>> {
    let grid = s.grid_in;
    let n = grid.n();
    if s.dim_in() != s.dim_out() {
        return Err(Error::DimensionMismatch("symbol needs a square operator".into()));
    }
    // column 0 holds kappa(r'), so symbol = sqrt(d) * DFT(kappa)
    let mut kernel: Vec<Complex64> = (0..grid.dim()).map(|row| s.m[[row, 0]]).collect();
    dft2_inplace(&mut kernel, n, DftDirection::Forward);
    let scale = (grid.dim() as f64).sqrt();
    Ok(Array2::from_shape_fn((n, n), |(a, b)| kernel[a * n + b] * scale))
}

/// Macropixel phase mask: `macro_n`^2 phases in [0, 2 pi) and the assignment
/// of grid pixels to macropixels.
#[derive(Debug, Clone)]
pub struct PhaseMask {
    pub macro_n: usize,
    pub phases: Array2<f64>,
    /// pixel_map[macro_flat] = flat grid-pixel indices of that macropixel.
    pub pixel_map: Vec<Vec<usize>>,
}

impl PhaseMask {
    /// Zero mask tiling the whole grid: pixel (a, b) belongs to macropixel
    /// (a * macro_n / n, b * macro_n / n).
    pub fn tiled(grid: &Grid, macro_n: usize) -> Result<Self> {
        Self::tiled_region(grid, macro_n, (0, 0), grid.n())
    }

    /// Zero mask tiling a square sub-region (the SLM active zone); pixels
    /// outside stay unmapped and keep phase 0.
    pub fn tiled_region(
        grid: &Grid,
        macro_n: usize,
        origin: (usize, usize),
        side: usize,
    ) -> Result<Self> {
        if macro_n == 0 || macro_n > side {
            return Err(Error::InvalidParameter(format!(
                "macro_n = {macro_n} does not fit region side {side}"
            )));
        }
        if origin.0 + side > grid.n() || origin.1 + side > grid.n() {
            return Err(Error::InvalidParameter("active region exceeds the grid".into()));
        }
        let mut pixel_map = vec![Vec::new(); macro_n * macro_n];
        for a in 0..side {
            for b in 0..side {
                let ma = a * macro_n / side;
                let mb = b * macro_n / side;
                pixel_map[ma * macro_n + mb].push(grid.flatten(origin.0 + a, origin.1 + b));
            }
        }
        Ok(PhaseMask { macro_n, phases: Array2::zeros((macro_n, macro_n)), pixel_map })
    }

    /// Validate a custom map: no grid pixel may belong to two macropixels.
    pub fn new(
        macro_n: usize,
        phases: Array2<f64>,
        pixel_map: Vec<Vec<usize>>,
        grid: &Grid,
    ) -> Result<Self> {
        if phases.dim() != (macro_n, macro_n) || pixel_map.len() != macro_n * macro_n {
            return Err(Error::DimensionMismatch("phase/pixel_map shape".into()));
        }
        let mut seen = vec![false; grid.dim()];
        for pixels in &pixel_map {
            for &p in pixels {
                if p >= grid.dim() {
                    return Err(Error::InvalidParameter(format!("pixel index {p} out of grid")));
                }
                if seen[p] {
                    return Err(Error::InvalidParameter(format!(
                        "overlapping macropixels at grid pixel {p}"
                    )));
                }
                seen[p] = true;
            }
        }
        let mask = PhaseMask { macro_n, phases, pixel_map };
        Ok(mask.wrapped())
    }

    pub fn macro_count(&self) -> usize {
        self.macro_n * self.macro_n
    }

    /// Copy with all phases wrapped to [0, 2 pi).
    pub fn wrapped(mut self) -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        self.phases.mapv_inplace(|p| p.rem_euclid(tau));
        self
    }

    /// Add an offset to one macropixel (flat index), wrapping.
    pub fn offset_macro(&mut self, macro_flat: usize, delta: f64) {
        let tau = 2.0 * std::f64::consts::PI;
        let (a, b) = (macro_flat / self.macro_n, macro_flat % self.macro_n);
        self.phases[[a, b]] = (self.phases[[a, b]] + delta).rem_euclid(tau);
    }

    /// Per-grid-pixel phase vector (unmapped pixels get 0).
    pub fn pixel_phases(&self, grid: &Grid) -> Array1<f64> {
        let mut out = Array1::zeros(grid.dim());
        for (mf, pixels) in self.pixel_map.iter().enumerate() {
            let phase = self.phases[[mf / self.macro_n, mf % self.macro_n]];
            for &p in pixels {
                out[p] = phase;
            }
        }
        out
    }
}

/// Diagonal SLM operator exp(i theta) per mapped pixel; unmapped pixels pass
/// unmodulated.
pub fn slm_diagonal(mask: &PhaseMask, grid: &Grid) -> Result<ScatteringMatrix> {
    let d = grid.dim();
    let phases = mask.pixel_phases(grid);
    let mut m = Array2::zeros((d, d));
    for j in 0..d {
        m[[j, j]] = Complex64::from_polar(1.0, phases[j]);
    }
    ScatteringMatrix::new(*grid, *grid, m, Tag::Slm)
}

/// 2f lens operator: the centered unitary DFT with the physical output pitch
/// lambda f / (n pitch) recorded on the output grid. Applying it twice gives
/// the parity operator about the center pixel, exactly.
pub fn fourier_lens(grid: Grid, focal: f64, lambda: f64) -> Result<ScatteringMatrix> {
    if !(focal > 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidParameter("focal length and wavelength must be positive".into()));
    }
    if grid.boundary() != Boundary::Circular {
        return Err(Error::BoundaryMismatch("fourier_lens needs a circular grid".into()));
    }
    let n = grid.n();
    let d = grid.dim();
    let c = grid.center() as f64;
    let mut m = Array2::zeros((d, d));
    for (row, p) in grid.points().enumerate() {
        for (col, q) in grid.points().enumerate() {
            let phase = -2.0
                * std::f64::consts::PI
                * ((p.0 as f64 - c) * (q.0 as f64 - c) + (p.1 as f64 - c) * (q.1 as f64 - c))
                / n as f64;
            m[[row, col]] = Complex64::from_polar(1.0 / n as f64, phase);
        }
    }
    let out_pitch = lambda * focal / (n as f64 * grid.pitch());
    let grid_out = Grid::new(n, out_pitch, Boundary::Circular)?;
    ScatteringMatrix::new(grid, grid_out, m, Tag::Lens)
}

/// Product of stages listed in physical order (first-encountered first):
/// compose([A, B, C]) = C * B * A.
pub fn compose(stages: &[&ScatteringMatrix]) -> Result<ScatteringMatrix> {
    if stages.is_empty() {
        return Err(Error::InvalidParameter("compose of zero stages".into()));
    }
    for w in stages.windows(2) {
        if w[1].dim_in() != w[0].dim_out() {
            return Err(Error::DimensionMismatch(format!(
                "stage output d = {} feeds stage input d = {}",
                w[0].dim_out(),
                w[1].dim_in()
            )));
        }
    }
    let mut acc = stages[0].m.clone();
    for s in &stages[1..] {
        acc = s.m.dot(&acc);
    }
    ScatteringMatrix::new(stages[0].grid_in, stages.last().unwrap().grid_out, acc, Tag::Composed)
}

/// Verdict of the triviality test: a trivial operator concentrates each
/// column on a single pixel consistent with one global scaling/reflection
/// r' = -alpha r (alpha = -1 is the identity, +1 the parity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrivialityVerdict {
    Trivial { alpha: f64 },
    NonTrivial,
}

pub fn is_trivial(s: &ScatteringMatrix, tol: f64) -> TrivialityVerdict {
    let grid = s.grid_in;
    let n = grid.n() as isize;
    let c = grid.center() as isize;
    let d = s.dim_in();
    if s.dim_out() != d {
        return TrivialityVerdict::NonTrivial;
    }
    let signed = |x: isize| -> f64 {
        let mut w = x.rem_euclid(n);
        if w > n / 2 {
            w -= n;
        }
        w as f64
    };
    let mut num = 0.0_f64;
    let mut den = 0.0_f64;
    let mut peaks: Vec<((f64, f64), (f64, f64))> = Vec::with_capacity(d);
    let half = (n / 2) as f64;
    for (col, q) in grid.points().enumerate() {
        let mut total = 0.0;
        let mut best = 0.0;
        let mut best_row = 0usize;
        for row in 0..d {
            let e = s.m[[row, col]].norm_sqr();
            total += e;
            if e > best {
                best = e;
                best_row = row;
            }
        }
        if total == 0.0 {
            continue;
        }
        if best / total < 1.0 - tol {
            return TrivialityVerdict::NonTrivial;
        }
        let p = grid.unflatten(best_row);
        let u = (signed(p.0 as isize - c), signed(p.1 as isize - c));
        let v = (signed(q.0 as isize - c), signed(q.1 as isize - c));
        // Nyquist coordinates (|v| = n/2 on an even torus) are sign-ambiguous;
        // keep them out of the alpha fit but still check residuals below.
        if u.0.abs() < half && u.1.abs() < half && v.0.abs() < half && v.1.abs() < half {
            num += u.0 * v.0 + u.1 * v.1;
            den += v.0 * v.0 + v.1 * v.1;
        }
        peaks.push((u, v));
    }
    let wrap_res = |x: f64| -> f64 {
        match grid.boundary() {
            Boundary::Circular => x - (n as f64) * (x / n as f64).round(),
            Boundary::Linear => x,
        }
    };
    let consistent = |alpha: f64, peaks: &[((f64, f64), (f64, f64))]| -> bool {
        peaks.iter().all(|(u, v)| {
            wrap_res(u.0 + alpha * v.0).abs() <= 0.5 && wrap_res(u.1 + alpha * v.1).abs() <= 0.5
        })
    };
    let mut candidates = vec![-1.0, 1.0];
    if den > 0.0 {
        candidates.push(-num / den);
    }
    for alpha in candidates {
        if consistent(alpha, &peaks) {
            return TrivialityVerdict::Trivial { alpha };
        }
    }
    TrivialityVerdict::NonTrivial
}

/// Which restoring kernel to evaluate: H fixes the sum coordinate, Q the
/// difference coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    SumH,
    DifferenceQ,
}

/// Direct-summation evaluation of the restoring kernel for a fixed object
/// point, over all output pairs (r_i', r_s'):
///
/// * `SumH`: H(r_i', r_s'; r_+) = sum over pairs (i, s) with i + s fixed by
///   M r_+ of S(i', i) S(s', s) exp(-|x_i - x_s|^2 * weight_rate); the rate
///   pi^2 sigma_r^2 / (4 lambda_p^2 f1^2) reproduces the input-plane weight.
/// * `DifferenceQ`: pairs with i - s fixed by r_+, weight
///   exp(-|x_i + x_s|^2 * weight_rate) with rate sigma_k^2 / 4.
///
/// Guarded to n <= 16 (cost grows as d^3).
pub fn kernel_slice(
    s: &ScatteringMatrix,
    r_plus: (usize, usize),
    mode: KernelMode,
    m_scale: f64,
    weight_rate: f64,
) -> Result<Array2<Complex64>> {
    let grid = s.grid_in;
    let n = grid.n();
    if n > 16 {
        return Err(Error::GridTooLarge { n, max: 16 });
    }
    if grid.boundary() != Boundary::Circular {
        return Err(Error::BoundaryMismatch("kernel_slice assumes a circular grid".into()));
    }
    if s.dim_in() != s.dim_out() {
        return Err(Error::DimensionMismatch("kernel_slice needs a square operator".into()));
    }
    let d = grid.dim();
    let ni = n as isize;
    let c = grid.center() as isize;
    // per-axis total index fixed by the slice: sum mode v = 2c + M (p - c),
    // difference mode u = M (p - c)
    let axis_target = |p: usize| -> isize {
        let scaled = (m_scale * (p as isize - c) as f64).round() as isize;
        match mode {
            KernelMode::SumH => 2 * c + scaled,
            KernelMode::DifferenceQ => scaled,
        }
    };
    let target = (axis_target(r_plus.0), axis_target(r_plus.1));

    let mut out = Array2::zeros((d, d));
    for row_i in 0..d {
        for row_s in 0..d {
            let mut acc = Complex64::default();
            for (col_i, i) in grid.points().enumerate() {
                // partner index fixed by the slice
                let (pa, pb) = match mode {
                    KernelMode::SumH => (
                        (target.0 - i.0 as isize).rem_euclid(ni) as usize,
                        (target.1 - i.1 as isize).rem_euclid(ni) as usize,
                    ),
                    KernelMode::DifferenceQ => (
                        (i.0 as isize - target.0).rem_euclid(ni) as usize,
                        (i.1 as isize - target.1).rem_euclid(ni) as usize,
                    ),
                };
                let col_s = grid.flatten(pa, pb);
                let w = match mode {
                    KernelMode::SumH => (-grid.dist2(i, (pa, pb)) * weight_rate).exp(),
                    KernelMode::DifferenceQ => {
                        let xp = grid.coord(i.0) + grid.coord(pa);
                        let yp = grid.coord(i.1) + grid.coord(pb);
                        (-(xp * xp + yp * yp) * weight_rate).exp()
                    }
                };
                acc += s.m[[row_i, col_i]] * s.m[[row_s, col_s]] * w;
            }
            out[[row_i, row_s]] = acc;
        }
    }
    Ok(out)
}
