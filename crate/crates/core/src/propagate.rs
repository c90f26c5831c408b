//! The three propagation laws: classical fields (E_out = S E_in), pure
//! biphoton states (Psi_out = S Psi S^t, plain transpose), and separable
//! mixed ensembles (per-component intensity products), plus singles-intensity
//! marginals.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::biphoton::{frobenius, TwoPhotonMixed, TwoPhotonPure};
use crate::error::{Error, Result};
use crate::lattice::{ComplexField, Grid};
use crate::media::ScatteringMatrix;

/// Discrete second-order correlation function over a grid, entry (i, s) =
/// G2(r_i, r_s), real and nonnegative.
#[derive(Debug, Clone)]
pub struct G2Matrix {
    pub grid: Grid,
    pub values: Array2<f64>,
}

impl G2Matrix {
    pub fn new(grid: Grid, values: Array2<f64>) -> Result<Self> {
        let d = grid.dim();
        if values.dim() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "G2 is {}x{}, grid d = {d}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter("G2 entries must be finite and nonnegative".into()));
        }
        Ok(G2Matrix { grid, values })
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }
}

/// Classical propagation E_out = S E_in.
pub fn classical(s: &ScatteringMatrix, e_in: &ComplexField) -> Result<ComplexField> {
    if e_in.values.len() != s.dim_in() {
        return Err(Error::DimensionMismatch(format!(
            "field d = {} into operator with d_in = {}",
            e_in.values.len(),
            s.dim_in()
        )));
    }
    let out = s.m.dot(&e_in.values);
    ComplexField::new(s.grid_out, out)
}

/// Result of a two-photon propagation: the renormalized state plus the
/// pre-normalization Frobenius weight (the pair-flux throughput of the
/// operator on this state).
#[derive(Debug, Clone)]
pub struct Propagated {
    pub state: TwoPhotonPure,
    pub weight: f64,
}

/// Raw bilinear propagation S * Psi * S^t without renormalization.
///
/// The transpose (not the conjugate transpose) is load-bearing: both photons
/// traverse the same medium forward.
pub fn two_photon_raw(s: &ScatteringMatrix, psi: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    if psi.nrows() != s.dim_in() || psi.ncols() != s.dim_in() {
        return Err(Error::DimensionMismatch(format!(
            "psi {}x{} into operator with d_in = {}",
            psi.nrows(),
            psi.ncols(),
            s.dim_in()
        )));
    }
    let tmp = s.m.dot(psi);
    Ok(tmp.dot(&s.m.t()))
}

/// Propagate a pure state through the operator and renormalize, recording
/// the pre-normalization weight.
pub fn two_photon(s: &ScatteringMatrix, psi: &TwoPhotonPure) -> Result<Propagated> {
    let raw = two_photon_raw(s, &psi.psi)?;
    let weight = frobenius(&raw);
    let state = TwoPhotonPure::from_unnormalized(s.grid_out, raw)?;
    Ok(Propagated { state, weight })
}

/// G2 of a separable ensemble after the operator:
/// G2(i, s) = sum_R p_R |(S phi_R)(i)|^2 |(S chi_R)(s)|^2.
/// Works component by component; never materializes a d^2 x d^2 object.
pub fn mixed_g2(s: &ScatteringMatrix, rho: &TwoPhotonMixed) -> Result<G2Matrix> {
    if rho.components.is_empty() {
        return Err(Error::ZeroInput("empty ensemble".into()));
    }
    let d_out = s.dim_out();
    let mut g2 = Array2::<f64>::zeros((d_out, d_out));
    let mut ai = Array1::<f64>::zeros(d_out);
    let mut bs = Array1::<f64>::zeros(d_out);
    for comp in &rho.components {
        if comp.factor_i.len() != s.dim_in() {
            return Err(Error::DimensionMismatch("ensemble factor length".into()));
        }
        let a = s.m.dot(&comp.factor_i);
        let b = s.m.dot(&comp.factor_s);
        for (x, v) in ai.iter_mut().zip(a.iter()) {
            *x = v.norm_sqr();
        }
        for (x, v) in bs.iter_mut().zip(b.iter()) {
            *x = v.norm_sqr();
        }
        for i in 0..d_out {
            let w = comp.weight * ai[i];
            if w == 0.0 {
                continue;
            }
            let mut row = g2.row_mut(i);
            for (g, &bv) in row.iter_mut().zip(bs.iter()) {
                *g += w * bv;
            }
        }
    }
    G2Matrix::new(s.grid_out, g2)
}

/// Propagate a separable ensemble factor-wise: since the two photons pass
/// the operator independently, (S x S)(phi (x) chi) = (S phi) (x) (S chi)
/// holds component by component.
pub fn propagate_mixed(s: &ScatteringMatrix, rho: &TwoPhotonMixed) -> Result<TwoPhotonMixed> {
    if rho.components.is_empty() {
        return Err(Error::ZeroInput("empty ensemble".into()));
    }
    let mut components = Vec::with_capacity(rho.components.len());
    for comp in &rho.components {
        if comp.factor_i.len() != s.dim_in() {
            return Err(Error::DimensionMismatch("ensemble factor length".into()));
        }
        components.push(crate::biphoton::MixedComponent {
            weight: comp.weight,
            factor_i: s.m.dot(&comp.factor_i),
            factor_s: s.m.dot(&comp.factor_s),
        });
    }
    Ok(TwoPhotonMixed { grid: s.grid_out, components })
}

/// Direct-intensity marginal of a pure state: I(r) = sum_s |psi(r, s)|^2,
/// reshaped to the n-by-n grid.
pub fn singles_image(psi: &TwoPhotonPure) -> Array2<f64> {
    let n = psi.grid.n();
    let d = psi.grid.dim();
    let mut out = Array2::zeros((n, n));
    for i in 0..d {
        let (a, b) = psi.grid.unflatten(i);
        out[[a, b]] = psi.psi.row(i).iter().map(|v| v.norm_sqr()).sum();
    }
    out
}

/// Row-sum marginal of a G2 matrix.
pub fn singles_from_g2(g2: &G2Matrix) -> Array2<f64> {
    let n = g2.grid.n();
    let d = g2.grid.dim();
    let mut out = Array2::zeros((n, n));
    for i in 0..d {
        let (a, b) = g2.grid.unflatten(i);
        out[[a, b]] = g2.values.row(i).sum();
    }
    out
}
