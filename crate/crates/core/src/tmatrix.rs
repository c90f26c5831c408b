//! Interferometric transmission-matrix measurement: Hadamard phase patterns
//! on the SLM macropixels, phase-shifting intensity frames, first-Fourier-
//! coefficient extraction, and the basis change back to the pixel basis.
//!
//! The measurement works in the gauge the experiment provides: the reference
//! field's per-output-pixel phase stays unknown (columns carry conj(E_ref)'s
//! phase); only the reference amplitude, directly measurable as an intensity,
//! is divided out.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::ComplexField;
use crate::media::{PhaseMask, ScatteringMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmBasis {
    Hadamard,
    Pixel,
}

impl TmBasis {
    fn as_str(&self) -> &'static str {
        match self {
            TmBasis::Hadamard => "hadamard",
            TmBasis::Pixel => "pixel",
        }
    }
}

/// Measured transmission matrix: d_out rows by macro_n^2 columns, in the
/// Hadamard or macropixel (pixel) input basis.
#[derive(Debug, Clone)]
pub struct MeasuredTm {
    pub m: Array2<Complex64>,
    pub basis: TmBasis,
    pub phase_steps: usize,
    pub macro_n: usize,
}

impl MeasuredTm {
    pub fn save_biph1(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_biph1(path, &self.m, "measured")
    }
}

/// The macro_n^2 mutually orthogonal +-1 masks H_j (x) H_k over a macro_n by
/// macro_n macropixel grid; mask 0 is all ones. Requires macro_n to be a
/// power of two (Sylvester construction).
pub fn hadamard_masks(macro_n: usize) -> Result<Vec<Array2<f64>>> {
    if macro_n == 0 || !macro_n.is_power_of_two() {
        return Err(Error::InvalidParameter(format!(
            "hadamard masks need a power-of-two macro_n, got {macro_n}"
        )));
    }
    // 1-D Sylvester Hadamard matrix
    let mut h = Array2::from_elem((1, 1), 1.0_f64);
    while h.nrows() < macro_n {
        let k = h.nrows();
        let mut next = Array2::zeros((2 * k, 2 * k));
        for a in 0..k {
            for b in 0..k {
                let v = h[[a, b]];
                next[[a, b]] = v;
                next[[a, b + k]] = v;
                next[[a + k, b]] = v;
                next[[a + k, b + k]] = -v;
            }
        }
        h = next;
    }
    let mut masks = Vec::with_capacity(macro_n * macro_n);
    for j in 0..macro_n {
        for k in 0..macro_n {
            masks.push(Array2::from_shape_fn((macro_n, macro_n), |(a, b)| h[[j, a]] * h[[k, b]]));
        }
    }
    Ok(masks)
}

/// Phase-shifting interferometric measurement of `truth` against the given
/// macropixel layout. For each Hadamard mask and each offset
/// theta_j = 2 pi j / phase_steps the output intensity
/// |E_ref + exp(i theta) E_h|^2 is recorded; the first Fourier coefficient
/// over theta recovers E_h conj(E_ref) per output pixel, which divided by
/// |E_ref| forms one Hadamard-basis column.
pub fn measure_tm(
    truth: &ScatteringMatrix,
    reference: &ComplexField,
    layout: &PhaseMask,
    phase_steps: usize,
) -> Result<MeasuredTm> {
    if phase_steps < 3 {
        return Err(Error::InvalidParameter(format!(
            "phase-shifting extraction needs phase_steps >= 3, got {phase_steps}"
        )));
    }
    if reference.values.len() != truth.dim_in() {
        return Err(Error::DimensionMismatch("reference field vs operator input".into()));
    }
    let macro_n = layout.macro_n;
    let masks = hadamard_masks(macro_n)?;
    let d_out = truth.dim_out();
    let d_in = truth.dim_in();

    let e_ref = truth.m.dot(&reference.values);
    let ref_amp: Array1<f64> = e_ref.mapv(|v| v.norm());
    let amp_floor = ref_amp.iter().cloned().fold(0.0_f64, f64::max) * 1e-14;

    let mut m = Array2::zeros((d_out, macro_n * macro_n));
    let mut field = Array1::<Complex64>::zeros(d_in);
    for (mask_idx, mask) in masks.iter().enumerate() {
        field.fill(Complex64::default());
        for (mf, pixels) in layout.pixel_map.iter().enumerate() {
            let v = mask[[mf / macro_n, mf % macro_n]];
            for &p in pixels {
                field[p] = Complex64::new(v, 0.0);
            }
        }
        let e_h = truth.m.dot(&field);
        // phase-shifted intensity frames and the first Fourier coefficient
        let mut coeff = Array1::<Complex64>::zeros(d_out);
        for j in 0..phase_steps {
            let theta = 2.0 * std::f64::consts::PI * j as f64 / phase_steps as f64;
            let rot = Complex64::from_polar(1.0, theta);
            let back = Complex64::from_polar(1.0, -theta);
            for (c, (r, h)) in coeff.iter_mut().zip(e_ref.iter().zip(e_h.iter())) {
                let intensity = (r + rot * h).norm_sqr();
                *c += intensity * back;
            }
        }
        let norm = 1.0 / phase_steps as f64;
        for (row, c) in coeff.iter().enumerate() {
            let amp = ref_amp[row];
            m[[row, mask_idx]] = if amp > amp_floor { c * norm / amp } else { Complex64::default() };
        }
    }
    Ok(MeasuredTm { m, basis: TmBasis::Hadamard, phase_steps, macro_n })
}

/// Basis change Hadamard -> macropixel: right-multiply by H^T / macro_n^2,
/// where column m of H is the flattened mask m.
pub fn hadamard_to_pixel(tm: &MeasuredTm) -> Result<MeasuredTm> {
    if tm.basis != TmBasis::Hadamard {
        return Err(Error::WrongBasis { expected: "hadamard", got: tm.basis.as_str() });
    }
    let h = mask_matrix(tm.macro_n)?;
    let scale = 1.0 / (tm.macro_n * tm.macro_n) as f64;
    let m = tm.m.dot(&h.t()) * Complex64::new(scale, 0.0);
    Ok(MeasuredTm { m, basis: TmBasis::Pixel, phase_steps: tm.phase_steps, macro_n: tm.macro_n })
}

/// Inverse basis change, for round-trip checks.
pub fn pixel_to_hadamard(tm: &MeasuredTm) -> Result<MeasuredTm> {
    if tm.basis != TmBasis::Pixel {
        return Err(Error::WrongBasis { expected: "pixel", got: tm.basis.as_str() });
    }
    let h = mask_matrix(tm.macro_n)?;
    let m = tm.m.dot(&h);
    Ok(MeasuredTm { m, basis: TmBasis::Hadamard, phase_steps: tm.phase_steps, macro_n: tm.macro_n })
}

/// H[q][m] = value of mask m at macropixel q.
fn mask_matrix(macro_n: usize) -> Result<Array2<Complex64>> {
    let masks = hadamard_masks(macro_n)?;
    let mm = macro_n * macro_n;
    Ok(Array2::from_shape_fn((mm, mm), |(q, m)| {
        Complex64::new(masks[m][[q / macro_n, q % macro_n]], 0.0)
    }))
}

/// Aggregate a full-resolution operator onto the macropixel columns of a
/// layout: column q is the sum of the truth's columns over the macropixel's
/// pixels (the response to a flat unit input on that macropixel).
pub fn aggregate_truth(truth: &ScatteringMatrix, layout: &PhaseMask) -> Array2<Complex64> {
    let mm = layout.macro_count();
    let d_out = truth.dim_out();
    let mut agg = Array2::zeros((d_out, mm));
    for (q, pixels) in layout.pixel_map.iter().enumerate() {
        for &p in pixels {
            for row in 0..d_out {
                agg[[row, q]] += truth.m[[row, p]];
            }
        }
    }
    agg
}

/// Relative Frobenius error between a pixel-basis measurement and the
/// macropixel-aggregated truth, after removing one free phase per output row
/// (the unknown reference phase) by the optimal rotation.
pub fn tm_error(measured: &MeasuredTm, truth: &ScatteringMatrix, layout: &PhaseMask) -> Result<f64> {
    if measured.basis != TmBasis::Pixel {
        return Err(Error::WrongBasis { expected: "pixel", got: measured.basis.as_str() });
    }
    let agg = aggregate_truth(truth, layout);
    if agg.dim() != measured.m.dim() {
        return Err(Error::DimensionMismatch(format!(
            "measured {:?} vs aggregated truth {:?}",
            measured.m.dim(),
            agg.dim()
        )));
    }
    let mut num = 0.0_f64;
    let mut den = 0.0_f64;
    for (row_m, row_t) in measured.m.rows().into_iter().zip(agg.rows()) {
        // optimal per-row rotation aligning measured onto the truth
        let overlap: Complex64 =
            row_m.iter().zip(row_t.iter()).map(|(m, t)| t * m.conj()).sum();
        let rot = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for (m, t) in row_m.iter().zip(row_t.iter()) {
            num += (m * rot - t).norm_sqr();
            den += t.norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroInput("aggregated truth is zero".into()));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, ComplexField, Grid};
    use crate::media::{compose, fourier_lens, thin_medium, SpeckleSpec, Tag};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn circ(n: usize) -> Grid {
        Grid::new(n, 1.0, Boundary::Circular).unwrap()
    }

    fn uniform_ref(grid: Grid) -> ComplexField {
        ComplexField::from_fn(grid, |_, _| Complex64::new(1.0, 0.0))
    }

    #[test]
    fn hadamard_masks_orthogonality() {
        let masks = hadamard_masks(2).unwrap();
        assert_eq!(masks.len(), 4);
        assert!(masks[0].iter().all(|&v| v == 1.0));
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = masks[a].iter().zip(masks[b].iter()).map(|(x, y)| x * y).sum();
                let expect = if a == b { 4.0 } else { 0.0 };
                assert_eq!(dot, expect, "gram[{a}][{b}]");
            }
        }
    }

    #[test]
    fn hadamard_masks_count_and_alphabet() {
        let masks = hadamard_masks(32).unwrap();
        assert_eq!(masks.len(), 1024);
        let masks = hadamard_masks(4).unwrap();
        for m in &masks {
            assert!(m.iter().all(|&v| v == 1.0 || v == -1.0));
        }
        assert!(hadamard_masks(6).is_err());
        assert!(hadamard_masks(0).is_err());
    }

    #[test]
    fn extraction_matches_field_product_oracle() {
        // the intensity-only phase-shifting path must recover the complex
        // product E_h conj(E_ref) / |E_ref| computed directly from fields
        let grid = circ(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_fn((64, 64), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let truth = ScatteringMatrix::new(grid, grid, m, Tag::Composed).unwrap();
        let layout = PhaseMask::tiled(&grid, 4).unwrap();
        let reference = uniform_ref(grid);

        for steps in [3usize, 4, 7] {
            let tm = measure_tm(&truth, &reference, &layout, steps).unwrap();
            let masks = hadamard_masks(4).unwrap();
            let e_ref = truth.m.dot(&reference.values);
            for (idx, mask) in masks.iter().enumerate() {
                let mut field = ndarray::Array1::<Complex64>::zeros(64);
                for (mf, pixels) in layout.pixel_map.iter().enumerate() {
                    for &p in pixels {
                        field[p] = Complex64::new(mask[[mf / 4, mf % 4]], 0.0);
                    }
                }
                let e_h = truth.m.dot(&field);
                for row in 0..64 {
                    let expect = e_h[row] * e_ref[row].conj() / e_ref[row].norm();
                    assert!(
                        (tm.m[[row, idx]] - expect).norm() <= 1e-10,
                        "steps {steps} mask {idx} row {row}"
                    );
                }
            }
        }
    }

    #[test]
    fn diagonal_truth_recovers_masks_themselves() {
        let grid = circ(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // unit-modulus random diagonal
        let field = ComplexField::from_fn(grid, |_, _| {
            Complex64::from_polar(1.0, rng.gen::<f64>() * 6.28)
        });
        let truth = crate::media::thin_medium_from_field(&field).unwrap();
        let layout = PhaseMask::tiled(&grid, 4).unwrap(); // 1 pixel per macropixel
        let tm = measure_tm(&truth, &uniform_ref(grid), &layout, 4).unwrap();
        let masks = hadamard_masks(4).unwrap();
        for (idx, mask) in masks.iter().enumerate() {
            for q in 0..16 {
                let expect = mask[[q / 4, q % 4]];
                // macropixel q maps to exactly pixel q under the 4-on-4 tiling
                let p = layout.pixel_map[q][0];
                assert!(
                    (tm.m[[p, idx]] - Complex64::new(expect, 0.0)).norm() <= 1e-10,
                    "mask {idx} pixel {p}"
                );
            }
        }
    }

    #[test]
    fn basis_roundtrip_and_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m_had = Array2::from_shape_fn((10, 4), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let tm = MeasuredTm { m: m_had.clone(), basis: TmBasis::Hadamard, phase_steps: 4, macro_n: 2 };
        let px = hadamard_to_pixel(&tm).unwrap();
        let back = pixel_to_hadamard(&px).unwrap();
        let max_err = back
            .m
            .iter()
            .zip(m_had.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-12);

        // hand-expanded 4x4 Hadamard for macro_n = 2: masks (as columns of H)
        // over macropixels q = (0,0), (0,1), (1,0), (1,1)
        let h = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        for row in 0..10 {
            for q in 0..4 {
                let mut acc = Complex64::default();
                for m in 0..4 {
                    acc += m_had[[row, m]] * h[q][m] / 4.0;
                }
                assert!((px.m[[row, q]] - acc).norm() <= 1e-12);
            }
        }
        // wrong-basis guard
        assert!(hadamard_to_pixel(&px).is_err());
    }

    #[test]
    fn noiseless_pixel_basis_matches_truth_up_to_row_phases() {
        // mixing truth (thin medium + lens) with a border reference around the
        // active zone, the physical configuration
        let grid = circ(16);
        let s0 = thin_medium(grid, &SpeckleSpec::thin(2.0, 5)).unwrap();
        let lens = fourier_lens(grid, 0.05, 800e-9).unwrap();
        let truth = compose(&[&s0, &lens]).unwrap();
        let layout = PhaseMask::tiled_region(&grid, 8, (4, 4), 8).unwrap();
        // reference light fills everything outside the active zone
        let reference = ComplexField::from_fn(grid, |a, b| {
            if (4..12).contains(&a) && (4..12).contains(&b) {
                Complex64::default()
            } else {
                Complex64::new(1.0, 0.0)
            }
        });
        let tm = measure_tm(&truth, &reference, &layout, 4).unwrap();
        let px = hadamard_to_pixel(&tm).unwrap();
        let err = tm_error(&px, &truth, &layout).unwrap();
        assert!(err <= 1e-6, "aligned relative error {err}");
    }

    #[test]
    fn macropixel_constant_truth_has_zero_aggregation_bias() {
        let grid = circ(8);
        let layout = PhaseMask::tiled(&grid, 4).unwrap();
        // truth whose columns are constant within each macropixel
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let block = Array2::from_shape_fn((64, 16), |_| {
            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let mut m = Array2::zeros((64, 64));
        for (q, pixels) in layout.pixel_map.iter().enumerate() {
            for &p in pixels {
                for row in 0..64 {
                    m[[row, p]] = block[[row, q]];
                }
            }
        }
        let truth = ScatteringMatrix::new(grid, grid, m, Tag::Composed).unwrap();
        let tm = measure_tm(&truth, &uniform_ref(grid), &layout, 4).unwrap();
        let px = hadamard_to_pixel(&tm).unwrap();
        let err = tm_error(&px, &truth, &layout).unwrap();
        assert!(err <= 1e-10, "aggregation bias {err}");
    }

    #[test]
    fn tm_error_gauge_invariance_and_exactness() {
        let grid = circ(8);
        let layout = PhaseMask::tiled(&grid, 4).unwrap();
        let s0 = thin_medium(grid, &SpeckleSpec::thin(2.0, 7)).unwrap();
        let lens = fourier_lens(grid, 0.05, 800e-9).unwrap();
        let truth = compose(&[&s0, &lens]).unwrap();
        let agg = aggregate_truth(&truth, &layout);

        let exact = MeasuredTm { m: agg.clone(), basis: TmBasis::Pixel, phase_steps: 4, macro_n: 4 };
        assert!(tm_error(&exact, &truth, &layout).unwrap() <= 1e-14);

        // random per-row phases leave the error at zero
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rotated = agg.clone();
        for mut row in rotated.rows_mut() {
            let rot = Complex64::from_polar(1.0, rng.gen::<f64>() * 6.28);
            row.mapv_inplace(|v| v * rot);
        }
        let gauged = MeasuredTm { m: rotated, basis: TmBasis::Pixel, phase_steps: 4, macro_n: 4 };
        assert!(tm_error(&gauged, &truth, &layout).unwrap() <= 1e-12);
    }

    #[test]
    fn tm_error_tracks_small_perturbations() {
        let grid = circ(8);
        let layout = PhaseMask::tiled(&grid, 4).unwrap();
        let s0 = thin_medium(grid, &SpeckleSpec::thin(2.0, 9)).unwrap();
        let lens = fourier_lens(grid, 0.05, 800e-9).unwrap();
        let truth = compose(&[&s0, &lens]).unwrap();
        let agg = aggregate_truth(&truth, &layout);

        let rms = (agg.iter().map(|v| v.norm_sqr()).sum::<f64>() / agg.len() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sigma = 0.01 * rms / 2.0_f64.sqrt();
        let noisy = agg.mapv(|v| {
            v + Complex64::new(
                sigma * rng.sample::<f64, _>(rand_distr::StandardNormal),
                sigma * rng.sample::<f64, _>(rand_distr::StandardNormal),
            )
        });
        let tm = MeasuredTm { m: noisy, basis: TmBasis::Pixel, phase_steps: 4, macro_n: 4 };
        let err = tm_error(&tm, &truth, &layout).unwrap();
        assert!((err - 0.01).abs() <= 0.005, "perturbation error {err}");
    }
}
