//! Scenario execution: builds the configured pipeline, writes every artifact
//! (PGM16 + CSV images, traces, masks, event lists) and a manifest recording
//! the generating parameters.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;

use pairlab::biphoton::{
    self, difference_encoded_state, guide_state, input_plane_state, separable_guide_ensemble,
    separable_object_ensemble, ObjectImage, SpdcParams,
};
use pairlab::correlate::{fidelity_ncc, g2_from_pure, peak_metrics, project_diff, project_sum};
use pairlab::error::{Error, Result};
use pairlab::lattice::{Boundary, ComplexField, Grid, MapMode, MapSign, SumCoordinateMap};
use pairlab::media::{
    compose, fourier_lens, odd_phase_symbol, pcp_solution, sign_solution, slm_diagonal,
    thin_medium, thin_medium_from_field, ScatteringMatrix, SpeckleSpec,
};
use pairlab::media::PhaseMask;
use pairlab::propagate::{classical, mixed_g2, propagate_mixed, singles_image, two_photon};
use pairlab::shapeopt::{
    identity_mask, mask_to_biph1, mask_to_pgm8, optimize, optimize_mixed, propagate_slm,
    solution_distance, Feedback, InitialMask, OptConfig,
};

use crate::config::ScenarioConfig;

/// Image output formats of `write_image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm16,
    Csv,
}

pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub full: bool,
    manifest: Vec<String>,
    consumed: Vec<(String, String)>,
}

impl RunContext {
    fn new(out_dir: PathBuf, seed: u64, full: bool) -> Result<Self> {
        std::fs::create_dir_all(&out_dir)?;
        Ok(RunContext { out_dir, seed, full, manifest: Vec::new(), consumed: Vec::new() })
    }

    fn consume(&mut self, section: &str, key: &str) {
        self.consumed.push((section.to_string(), key.to_string()));
    }

    /// Write an image in the requested format; the manifest records the file
    /// with its generating note and the run seed.
    pub fn write_image(
        &mut self,
        name: &str,
        img: &Array2<f64>,
        format: ImageFormat,
        note: &str,
    ) -> Result<()> {
        if img.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("image {name}")));
        }
        let file = match format {
            ImageFormat::Pgm16 => {
                let path = self.out_dir.join(format!("{name}.pgm"));
                pairlab::io::write_pgm16(&path, img)?;
                format!("{name}.pgm")
            }
            ImageFormat::Csv => {
                let path = self.out_dir.join(format!("{name}.csv"));
                pairlab::io::write_csv_matrix(&path, img)?;
                format!("{name}.csv")
            }
        };
        self.manifest.push(format!("{file}\t{note}\tseed={}", self.seed));
        Ok(())
    }

    fn write_both(&mut self, name: &str, img: &Array2<f64>, note: &str) -> Result<()> {
        self.write_image(name, img, ImageFormat::Pgm16, note)?;
        self.write_image(name, img, ImageFormat::Csv, note)
    }

    fn record(&mut self, file: &str, note: &str) {
        self.manifest.push(format!("{file}\t{note}\tseed={}", self.seed));
    }

    fn write_manifest(&self, scenario: &str) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(self.out_dir.join("manifest.txt"))?);
        writeln!(w, "# scenario={scenario} seed={} full={}", self.seed, self.full)?;
        for line in &self.manifest {
            writeln!(w, "{line}")?;
        }
        writeln!(w, "manifest.txt\trun manifest\tseed={}", self.seed)?;
        Ok(())
    }

    fn write_metrics(&mut self, rows: &[(String, f64)]) -> Result<()> {
        use std::io::Write;
        let path = self.out_dir.join("metrics.csv");
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "name,value")?;
        for (k, v) in rows {
            writeln!(w, "{k},{v:.16e}")?;
        }
        self.record("metrics.csv", "scalar summary metrics");
        Ok(())
    }
}

/// Execute a parsed scenario config into `out_dir`. Returns the directory.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    seed_override: Option<u64>,
    full: bool,
) -> Result<PathBuf> {
    let scenario = cfg
        .top_value("scenario")
        .ok_or_else(|| Error::Config("missing top-level `scenario = <kind>` (required sections depend on it; see docs)".into()))?
        .to_string();
    let seed = match seed_override {
        Some(s) => s,
        None => cfg
            .top_value("seed")
            .map(|v| v.parse::<u64>().map_err(|e| Error::Config(format!("seed: {e}"))))
            .transpose()?
            .unwrap_or(1),
    };
    let mut ctx = RunContext::new(out_dir.to_path_buf(), seed, full)?;
    ctx.consume("", "scenario");
    ctx.consume("", "seed");

    match scenario.as_str() {
        "encode-restore" => encode_restore(cfg, &mut ctx)?,
        "optimize" => optimize_scenario(cfg, &mut ctx)?,
        "media-gallery" => media_gallery(cfg, &mut ctx)?,
        "events" => events_scenario(cfg, &mut ctx)?,
        "tm-measure" => tm_measure(cfg, &mut ctx)?,
        "sigma-signature" => sigma_signature(cfg, &mut ctx)?,
        "classical-compare" => classical_compare(cfg, &mut ctx)?,
        "macropixel-study" => macropixel_study(cfg, &mut ctx)?,
        "multiplicity" => multiplicity(cfg, &mut ctx)?,
        "diff-encoding" => diff_encoding(cfg, &mut ctx)?,
        other => {
            return Err(Error::Config(format!(
                "unknown scenario kind {other:?}; known: encode-restore, optimize, media-gallery, \
                 events, tm-measure, sigma-signature, classical-compare, macropixel-study, \
                 multiplicity, diff-encoding"
            )))
        }
    }
    cfg.reject_unknown(&ctx.consumed)?;
    ctx.write_manifest(&scenario)?;
    Ok(ctx.out_dir.clone())
}

fn build_grid(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<Grid> {
    let s = cfg.section("grid");
    for k in ["n", "pitch_um", "boundary"] {
        ctx.consume("grid", k);
    }
    let n = if ctx.full { 51 } else { s.usize_or("n", 32)? };
    let pitch = s.f64_or("pitch_um", 50.0)? * 1e-6;
    let boundary = match s.str_or("boundary", "circular") {
        "circular" => Boundary::Circular,
        "linear" => Boundary::Linear,
        other => return Err(Error::Config(format!("[grid] boundary = {other:?}"))),
    };
    Grid::new(n, pitch, boundary)
}

fn build_spdc(cfg: &ScenarioConfig, ctx: &mut RunContext, default_sigma_r_um: f64) -> Result<SpdcParams> {
    let s = cfg.section("spdc");
    for k in ["sigma_r_um", "sigma_k_per_m", "lambda_p_nm", "profile"] {
        ctx.consume("spdc", k);
    }
    let sigma_r = s.f64_or("sigma_r_um", default_sigma_r_um)? * 1e-6;
    let sigma_k = s.f64_or("sigma_k_per_m", 4.7e3)?;
    let lambda_p = s.f64_or("lambda_p_nm", 402.0)? * 1e-9;
    let mut p = SpdcParams::from_widths(sigma_r, sigma_k, lambda_p)?;
    if s.str_or("profile", "gaussian") == "sinc" {
        p = p.with_profile(biphoton::PhaseMatchProfile::Sinc);
    }
    Ok(p)
}

fn build_object(cfg: &ScenarioConfig, ctx: &mut RunContext, grid: Grid) -> Result<ObjectImage> {
    let s = cfg.section("object");
    for k in ["kind", "fill", "path", "threshold", "at_row", "at_col"] {
        ctx.consume("object", k);
    }
    match s.str_or("kind", "digit8") {
        "digit8" => Ok(ObjectImage::digit_eight(grid)),
        "random" => Ok(ObjectImage::random_binary(grid, s.f64_or("fill", 0.35)?, ctx.seed ^ 0x0B)),
        "uniform" => ObjectImage::uniform(grid, 1.0),
        "point" => {
            let r = s.usize_or("at_row", grid.center())?;
            let c = s.usize_or("at_col", grid.center())?;
            ObjectImage::point(grid, (r, c))
        }
        "pgm" => {
            let path = s.require("path")?;
            let threshold = s.f64("threshold")?;
            ObjectImage::from_pgm(Path::new(path), grid.pitch(), grid.boundary(), threshold)
        }
        other => Err(Error::Config(format!("[object] kind = {other:?}"))),
    }
}

/// The system from the state plane to the output plane: a medium in the
/// state plane followed by a Fourier lens.
fn build_system(
    cfg: &ScenarioConfig,
    ctx: &mut RunContext,
    grid: Grid,
) -> Result<(ScatteringMatrix, ScatteringMatrix)> {
    let s = cfg.section("medium");
    for k in ["kind", "corr_len_px", "envelope_sigma_px", "focal_mm", "lambda_nm"] {
        ctx.consume("medium", k);
    }
    let focal = s.f64_or("focal_mm", 50.0)? * 1e-3;
    let lambda = s.f64_or("lambda_nm", 804.0)? * 1e-9;
    let lens = fourier_lens(grid, focal, lambda)?;
    let corr = s.f64_or("corr_len_px", 2.0)?;
    let medium = match s.str_or("kind", "thin") {
        "thin" => thin_medium(grid, &SpeckleSpec::thin(corr, ctx.seed ^ 0x5EED))?,
        "thick" => {
            let sig = s.f64_or("envelope_sigma_px", 8.0)?;
            pairlab::media::thick_medium(grid, &SpeckleSpec::thick(corr, sig, ctx.seed ^ 0x5EED))?
        }
        "random-phase" => {
            // unit-modulus disorder displayed on the SLM itself
            let speckle = pairlab::media::speckle_field(grid, &SpeckleSpec::thin(corr, ctx.seed ^ 0x5EED))?;
            let phase_only = ComplexField::new(
                grid,
                speckle.values.mapv(|v| Complex64::from_polar(1.0, v.arg())),
            )?;
            thin_medium_from_field(&phase_only)?
        }
        "none" => ScatteringMatrix::identity(grid),
        other => return Err(Error::Config(format!("[medium] kind = {other:?}"))),
    };
    let sys = compose(&[&medium, &lens])?;
    Ok((sys, lens))
}

fn sum_map(grid: &Grid) -> Result<SumCoordinateMap> {
    SumCoordinateMap::new(grid, MapMode::Circular, MapSign::Sum)
}

/// The quantum-vs-classical restoration tableau behind the headline figure:
/// correlation images of an encoded object with no medium, through a
/// speckle system, and through the analytic image-preserving solution, with
/// the matching direct-intensity insets and classical transmissions.
fn encode_restore(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = build_grid(cfg, ctx)?;
    let p = build_spdc(cfg, ctx, 0.0)?;
    let object = build_object(cfg, ctx, grid)?;
    let optics = biphoton::desk_optics();
    let psi = input_plane_state(&object, &p, &optics)?;
    let map = sum_map(&grid)?;

    let (sys, _lens) = build_system(cfg, ctx, grid)?;
    let mut rng_g = rand::SeedableRng::seed_from_u64(ctx.seed ^ 0x516);
    let g = random_sign_field(&grid, &mut rng_g);
    let tailored = sign_solution(grid, &g)?;

    ctx.write_both("object", &object.intensity(), "encoded object |t|^2")?;

    let mut metrics = Vec::new();
    for (label, op) in [
        ("no_medium", ScatteringMatrix::identity(grid)),
        ("medium", sys),
        ("tailored", tailored.clone()),
    ] {
        let out = two_photon(&op, &psi)?;
        let img = project_sum(&g2_from_pure(&out.state), &map)?;
        ctx.write_both(
            &format!("gamma_{label}"),
            &img.object_aligned(grid.n()),
            &format!("sum-correlation image, {label}"),
        )?;
        ctx.write_both(
            &format!("intensity_{label}"),
            &singles_image(&out.state),
            &format!("direct-intensity inset, {label}"),
        )?;
        metrics.push((
            format!("fidelity_{label}"),
            fidelity_ncc(&img, &object.intensity()).unwrap_or(0.0),
        ));

        // classical transmission of the same object through the same system
        let e_in = ComplexField::new(
            grid,
            ndarray::Array1::from_iter(object.values.iter().map(|&t| Complex64::new(t, 0.0))),
        )?;
        let e_out = classical(&op, &e_in)?;
        ctx.write_both(
            &format!("classical_{label}"),
            &e_out.intensity(),
            &format!("classical intensity, {label}"),
        )?;
    }
    ctx.write_metrics(&metrics)
}

fn random_sign_field(grid: &Grid, rng: &mut rand_chacha::ChaCha8Rng) -> Array2<f64> {
    use rand::Rng;
    Array2::from_shape_fn((grid.n(), grid.n()), |_| loop {
        let v: f64 = rng.gen::<f64>() - 0.5;
        if v != 0.0 {
            break v;
        }
    })
}

fn build_opt_config(cfg: &ScenarioConfig, ctx: &mut RunContext, macro_n: usize) -> Result<OptConfig> {
    let s = cfg.section("optimization");
    for k in [
        "steps",
        "phase_samples",
        "partition_fraction",
        "feedback",
        "pair_rate_hz",
        "batch_s",
        "plateau_window",
    ] {
        ctx.consume("optimization", k);
    }
    let mut oc = OptConfig::new(macro_n, s.usize_or("steps", 1500)?, ctx.seed);
    oc.phase_samples = s.usize_or("phase_samples", 7)?;
    oc.partition_fraction = s.f64_or("partition_fraction", 0.5)?;
    oc.plateau_window = s.usize_or("plateau_window", 200)?;
    match s.str_or("feedback", "analytic") {
        "analytic" => {}
        "sampled" => {
            oc.feedback = Feedback::Sampled {
                pair_rate: s.f64_or("pair_rate_hz", 4000.0)?,
                batch_seconds: s.f64_or("batch_s", 3.0)?,
            };
        }
        other => return Err(Error::Config(format!("[optimization] feedback = {other:?}"))),
    }
    Ok(oc)
}

fn build_guide(cfg: &ScenarioConfig, ctx: &mut RunContext, grid: Grid, p: &SpdcParams) -> Result<pairlab::biphoton::TwoPhotonPure> {
    ctx.consume("slm", "magnification");
    let m2 = cfg.section("slm").f64_or("magnification", 4.3)?;
    guide_state(grid, p, m2)
}

/// Guide-state optimization through a scattering system: trace, final mask,
/// and before/after correlation images.
fn optimize_scenario(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = build_grid(cfg, ctx)?;
    let p = build_spdc(cfg, ctx, 13.0)?;
    let psi = build_guide(cfg, ctx, grid, &p)?;
    let (sys, _lens) = build_system(cfg, ctx, grid)?;
    ctx.consume("slm", "macro_n");
    let macro_n = cfg.section("slm").usize_or("macro_n", 16)?;
    let layout = PhaseMask::tiled(&grid, macro_n)?;
    let oc = build_opt_config(cfg, ctx, macro_n)?;

    let map = sum_map(&grid)?;
    let before = propagate_slm(&sys, &layout, &psi)?;
    let img_before = project_sum(&g2_from_pure(&before.state), &map)?;
    ctx.write_both("gamma_before", &img_before.values, "correlation image before optimization")?;

    let (mask, trace) = optimize(&sys, &psi, &layout, &oc)?;
    trace.write_csv(&ctx.out_dir.join("trace.csv"))?;
    ctx.record("trace.csv", "optimization trace: step,theta_opt,objective,fit params");
    mask_to_pgm8(&mask, &ctx.out_dir.join("mask.pgm"))?;
    ctx.record("mask.pgm", "final SLM mask preview (phase as gray)");
    mask_to_biph1(&mask, &ctx.out_dir.join("mask.biph1"))?;
    ctx.record("mask.biph1", "final SLM mask phases");

    let after = propagate_slm(&sys, &mask, &psi)?;
    let img_after = project_sum(&g2_from_pure(&after.state), &map)?;
    ctx.write_both("gamma_after", &img_after.values, "correlation image after optimization")?;

    let before_m = peak_metrics(&img_before);
    let after_m = peak_metrics(&img_after);
    ctx.write_metrics(&[
        ("initial_objective".into(), trace.initial_objective),
        ("final_objective".into(), trace.final_objective()),
        ("best_objective".into(), *trace.best_curve().last().unwrap()),
        ("steps".into(), trace.steps.len() as f64),
        ("center_before".into(), before_m.center_value),
        ("center_after".into(), after_m.center_value),
        ("fwhm_after_px".into(), after_m.fwhm_px),
        ("contrast_after".into(), after_m.contrast),
    ])
}

/// Correlation images of an encoded object through a chosen medium variant:
/// untreated, and tailored by optimization on the guide state.
fn media_gallery(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = build_grid(cfg, ctx)?;
    let p_obj = build_spdc(cfg, ctx, 0.0)?;
    let object = build_object(cfg, ctx, grid)?;
    let optics = biphoton::desk_optics();
    let psi_obj = input_plane_state(&object, &p_obj, &optics)?;
    let guide_p = SpdcParams::from_widths(13e-6, p_obj.sigma_k, p_obj.lambda_p)?;
    let psi_guide = build_guide(cfg, ctx, grid, &guide_p)?;
    let (sys, _lens) = build_system(cfg, ctx, grid)?;
    ctx.consume("slm", "macro_n");
    let macro_n = cfg.section("slm").usize_or("macro_n", 16)?;
    let layout = PhaseMask::tiled(&grid, macro_n)?;
    let oc = build_opt_config(cfg, ctx, macro_n)?;
    let map = sum_map(&grid)?;

    // no medium reference
    let id = ScatteringMatrix::identity(grid);
    let img = project_sum(&g2_from_pure(&two_photon(&id, &psi_obj)?.state), &map)?;
    ctx.write_both("gamma_no_medium", &img.object_aligned(grid.n()), "object image, no medium")?;

    // untreated medium
    let out = two_photon(&sys, &psi_obj)?;
    let img = project_sum(&g2_from_pure(&out.state), &map)?;
    ctx.write_both("gamma_medium", &img.object_aligned(grid.n()), "object image through medium")?;
    ctx.write_both("intensity_medium", &singles_image(&out.state), "intensity inset through medium")?;

    // tailor on the guide state, then transmit the object
    let (mask, trace) = optimize(&sys, &psi_guide, &layout, &oc)?;
    let tailored_out = propagate_slm(&sys, &mask, &psi_obj)?;
    let img = project_sum(&g2_from_pure(&tailored_out.state), &map)?;
    ctx.write_both("gamma_tailored", &img.object_aligned(grid.n()), "object image after tailoring")?;
    ctx.write_both(
        "intensity_tailored",
        &singles_image(&tailored_out.state),
        "intensity inset after tailoring",
    )?;
    mask_to_pgm8(&mask, &ctx.out_dir.join("mask.pgm"))?;
    ctx.record("mask.pgm", "tailoring mask preview");

    let fid = fidelity_ncc(&img, &object.intensity()).unwrap_or(0.0);
    ctx.write_metrics(&[
        ("fidelity_tailored".into(), fid),
        ("optimization_gain".into(), trace.best_curve().last().unwrap() / trace.initial_objective),
    ])
}

/// Event-camera digital twin: synthesize time-tagged events from the encoded
/// state, pair them in a coincidence window, estimate accidentals from the
/// singles, and compare against the analytic correlation image.
fn events_scenario(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = build_grid(cfg, ctx)?;
    let p = build_spdc(cfg, ctx, 0.0)?;
    let object = build_object(cfg, ctx, grid)?;
    let optics = biphoton::desk_optics();
    let psi = input_plane_state(&object, &p, &optics)?;
    let map = sum_map(&grid)?;
    let g2 = g2_from_pure(&psi);
    let analytic = project_sum(&g2, &map)?;
    ctx.write_both("gamma_analytic", &analytic.values, "analytic correlation image")?;

    let s = cfg.section("events");
    for k in ["pair_rate_hz", "noise_rate_hz", "duration_s", "jitter_ns", "window_ns", "quantize_ns"] {
        ctx.consume("events", k);
    }
    let pair_rate = s.f64_or("pair_rate_hz", 1e5)?;
    let noise_rate = s.f64_or("noise_rate_hz", 2e5)?;
    let duration = s.f64_or("duration_s", 1.0)?;
    let jitter = s.f64_or("jitter_ns", 1.0)?;
    let window = s.f64_or("window_ns", 6.0)?;
    let quantize = s.f64("quantize_ns")?;

    let ev = pairlab::events::synthesize_events(
        &g2, pair_rate, noise_rate, duration, jitter, ctx.seed ^ 0xE7, quantize,
    )?;
    pairlab::events::write_events_csv(&ctx.out_dir.join("events.csv"), &ev)?;
    ctx.record("events.csv", "time-tagged detection events x,y,t_ns");

    let set = pairlab::events::pair_coincidences(&ev, window);
    let acc = pairlab::events::accidental_map(&ev, &map, window)?;
    let raw = pairlab::events::corr_image_from_events(&ev, &set, None, &map)?;
    let sub = pairlab::events::corr_image_from_events(&ev, &set, Some(&acc), &map)?;
    ctx.write_both("gamma_raw_counts", &raw.values, "pair histogram before subtraction")?;
    ctx.write_both("gamma_accidentals", &acc.values, "accidental estimate from singles")?;
    ctx.write_both("gamma_subtracted", &sub.values, "background-subtracted correlation image")?;

    let ncc = pairlab::correlate::ncc_zero_shift(&sub.values, &analytic.values)?;
    ctx.write_metrics(&[
        ("events_total".into(), ev.events.len() as f64),
        ("pairs_matched".into(), set.pairs.len() as f64),
        ("accidental_estimate".into(), acc.total()),
        ("ncc_vs_analytic".into(), ncc),
    ])
}

/// Phase-shifting Hadamard measurement of a seeded medium.
fn tm_measure(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = build_grid(cfg, ctx)?;
    let (sys, _lens) = build_system(cfg, ctx, grid)?;
    ctx.consume("slm", "macro_n");
    ctx.consume("slm", "phase_steps");
    let macro_n = cfg.section("slm").usize_or("macro_n", 8)?;
    let steps = cfg.section("slm").usize_or("phase_steps", 4)?;
    let layout = PhaseMask::tiled(&grid, macro_n)?;
    let reference = ComplexField::from_fn(grid, |_, _| Complex64::new(1.0, 0.0));
    let tm = pairlab::tmatrix::measure_tm(&sys, &reference, &layout, steps)?;
    let px = pairlab::tmatrix::hadamard_to_pixel(&tm)?;
    px.save_biph1(&ctx.out_dir.join("tm_pixel.biph1"))?;
    ctx.record("tm_pixel.biph1", "measured transmission matrix, pixel basis");
    let err = pairlab::tmatrix::tm_error(&px, &sys, &layout)?;
    ctx.write_metrics(&[("tm_relative_error".into(), err), ("phase_steps".into(), steps as f64)])
}

/// First-vs-second harmonic content of the sweep response for a diagonal
/// state and the realistic guide state.
fn sigma_signature(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    use std::io::Write;
    let grid = build_grid(cfg, ctx)?;
    let p = build_spdc(cfg, ctx, 13.0)?;
    let psi_default = build_guide(cfg, ctx, grid, &p)?;
    // the sigma_r -> 0 limit at the same plane: exactly diagonal
    let d = grid.dim();
    let mut diag = Array2::<Complex64>::zeros((d, d));
    for (j, pt) in grid.points().enumerate() {
        let xp = 2.0 * grid.coord(pt.0);
        let yp = 2.0 * grid.coord(pt.1);
        let v = (-(xp * xp + yp * yp) * (p.sigma_k / 4.3).powi(2)).exp();
        diag[[j, j]] = Complex64::new(v, 0.0);
    }
    let psi_diag = pairlab::biphoton::TwoPhotonPure::from_unnormalized(grid, diag)?;

    let (sys, _lens) = build_system(cfg, ctx, grid)?;
    ctx.consume("slm", "macro_n");
    let macro_n = cfg.section("slm").usize_or("macro_n", 16)?;
    let layout = PhaseMask::tiled(&grid, macro_n)?;
    let mut oc = build_opt_config(cfg, ctx, macro_n)?;
    oc.max_steps = oc.max_steps.min(120);
    oc.plateau_window = oc.max_steps;

    let path = ctx.out_dir.join("harmonics.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "state,step,a,b,c,a_over_c")?;
    let mut fractions = Vec::new();
    for (label, psi) in [("diagonal", &psi_diag), ("paper-default", &psi_default)] {
        let (_, trace) = optimize(&sys, psi, &layout, &oc)?;
        for s in &trace.steps {
            writeln!(
                w,
                "{label},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.step,
                s.fit.a,
                s.fit.b,
                s.fit.c,
                s.fit.a / s.fit.c
            )?;
        }
        let frac = trace.steps.iter().filter(|s| s.fit.a / s.fit.c >= 1e-2).count() as f64
            / trace.steps.len() as f64;
        fractions.push((format!("first_harmonic_fraction_{label}"), frac));
    }
    drop(w);
    ctx.record("harmonics.csv", "per-step double-cosine fit parameters");
    ctx.write_metrics(&fractions)
}

/// The entangled / classically-correlated / classical-light comparison grid:
/// each row propagated through no medium, the medium, the identity solution
/// and a non-trivial solution.
fn classical_compare(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = build_grid(cfg, ctx)?;
    let p = build_spdc(cfg, ctx, 0.0)?;
    let object = build_object(cfg, ctx, grid)?;
    let optics = biphoton::desk_optics();
    let psi = input_plane_state(&object, &p, &optics)?;
    let rho_t = separable_object_ensemble(&object, &p, &optics)?;
    let map = sum_map(&grid)?;
    let (sys, _lens) = build_system(cfg, ctx, grid)?;

    let mut rng_g = rand::SeedableRng::seed_from_u64(ctx.seed ^ 0x11C);
    let g = random_sign_field(&grid, &mut rng_g);
    let nontrivial = sign_solution(grid, &g)?;
    let identity = ScatteringMatrix::identity(grid);

    let ops: [(&str, &ScatteringMatrix); 4] = [
        ("none", &identity),
        ("medium", &sys),
        ("identity_sprime", &identity),
        ("nontrivial_sprime", &nontrivial),
    ];
    let mut metrics = Vec::new();
    for (col, op) in ops {
        // entangled row
        let out = two_photon(op, &psi)?;
        let img = project_sum(&g2_from_pure(&out.state), &map)?;
        ctx.write_both(
            &format!("entangled_{col}"),
            &img.object_aligned(grid.n()),
            &format!("entangled encoding through {col}"),
        )?;
        metrics.push((
            format!("fidelity_entangled_{col}"),
            fidelity_ncc(&img, &object.intensity()).unwrap_or(0.0),
        ));
        // classically correlated row
        let g2m = mixed_g2(op, &rho_t)?;
        let img = project_sum(&g2m, &map)?;
        ctx.write_both(
            &format!("rho_t_{col}"),
            &img.object_aligned(grid.n()),
            &format!("separable ensemble through {col}"),
        )?;
        metrics.push((
            format!("fidelity_rho_t_{col}"),
            fidelity_ncc(&img, &object.intensity()).unwrap_or(0.0),
        ));
        // classical intensity row
        let e_in = ComplexField::new(
            grid,
            ndarray::Array1::from_iter(object.values.iter().map(|&t| Complex64::new(t, 0.0))),
        )?;
        let e_out = classical(op, &e_in)?;
        ctx.write_both(
            &format!("classical_{col}"),
            &e_out.intensity(),
            &format!("classical intensity through {col}"),
        )?;
    }
    ctx.write_metrics(&metrics)
}

/// Optimizations with 8x8, 16x16 and 32x32 macropixels on one fixed medium.
fn macropixel_study(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    use std::io::Write;
    let grid = build_grid(cfg, ctx)?;
    let p = build_spdc(cfg, ctx, 13.0)?;
    let psi = build_guide(cfg, ctx, grid, &p)?;
    let (sys, _lens) = build_system(cfg, ctx, grid)?;
    let map = sum_map(&grid)?;
    ctx.consume("slm", "macro_list");
    ctx.consume("optimization", "steps_list");
    let macro_list: Vec<usize> = cfg
        .section("slm")
        .str_or("macro_list", "8,16,32")
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Config(format!("macro_list: {e}"))))
        .collect::<std::result::Result<_, _>>()?;
    let steps_list: Vec<usize> = cfg
        .section("optimization")
        .str_or("steps_list", "600,1500,2500")
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| Error::Config(format!("steps_list: {e}"))))
        .collect::<std::result::Result<_, _>>()?;

    let path = ctx.out_dir.join("study.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "macro_n,steps,gain,fwhm_px,contrast")?;
    for (i, &macro_n) in macro_list.iter().enumerate() {
        let steps = steps_list.get(i).copied().unwrap_or(1500);
        let layout = PhaseMask::tiled(&grid, macro_n)?;
        let mut oc = build_opt_config(cfg, ctx, macro_n)?;
        oc.max_steps = steps;
        let (mask, trace) = optimize(&sys, &psi, &layout, &oc)?;
        let out = propagate_slm(&sys, &mask, &psi)?;
        let img = project_sum(&g2_from_pure(&out.state), &map)?;
        let m = peak_metrics(&img);
        writeln!(
            w,
            "{macro_n},{},{:.6e},{:.6e},{:.6e}",
            trace.steps.len(),
            trace.best_curve().last().unwrap() / trace.initial_objective,
            m.fwhm_px,
            m.contrast
        )?;
        ctx.write_both(
            &format!("gamma_macro{macro_n}"),
            &img.values,
            &format!("restored correlation image, {macro_n}x{macro_n} macropixels"),
        )?;
    }
    drop(w);
    ctx.record("study.csv", "macropixel count vs restored-peak quality");
    Ok(())
}

/// Repeated seeded optimizations against one medium: pairwise mask
/// distinctness and the two-peak structure of optimized-vs-identity phase
/// differences.
fn multiplicity(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    use std::io::Write;
    let grid = build_grid(cfg, ctx)?;
    let p = build_spdc(cfg, ctx, 13.0)?;
    let psi = build_guide(cfg, ctx, grid, &p)?;
    let (sys, _lens) = build_system(cfg, ctx, grid)?;
    ctx.consume("slm", "macro_n");
    ctx.consume("optimization", "runs");
    let macro_n = cfg.section("slm").usize_or("macro_n", 8)?;
    let runs = cfg.section("optimization").usize_or("runs", 10)?;
    let layout = PhaseMask::tiled(&grid, macro_n)?;
    let id = identity_mask(&sys, &layout, None);

    let mut masks = Vec::new();
    for k in 0..runs {
        let mut oc = build_opt_config(cfg, ctx, macro_n)?;
        oc.seed = ctx.seed.wrapping_add(1000 + k as u64);
        oc.initial = InitialMask::RandomUniform;
        let (mask, _) = optimize(&sys, &psi, &layout, &oc)?;
        mask_to_pgm8(&mask, &ctx.out_dir.join(format!("mask_{k:02}.pgm")))?;
        ctx.record(&format!("mask_{k:02}.pgm"), &format!("optimized mask, run {k}"));
        masks.push(mask);
    }

    let sep_path = ctx.out_dir.join("separations.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(sep_path)?);
    writeln!(w, "run,separation_rad,degenerate")?;
    let mut seps = Vec::new();
    let mut hist_acc = vec![0.0_f64; 64];
    let mut edges = Vec::new();
    for (k, mask) in masks.iter().enumerate() {
        let dist = solution_distance(mask, &id.mask, &id.weights)?;
        writeln!(w, "{k},{:.16e},{}", dist.separation, dist.degenerate)?;
        seps.push(dist.separation);
        for (h, v) in hist_acc.iter_mut().zip(dist.histogram.iter()) {
            *h += v;
        }
        edges = dist.bin_edges.clone();
    }
    drop(w);
    ctx.record("separations.csv", "optimized-vs-identity two-peak separations");

    let hist_path = ctx.out_dir.join("histogram.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(hist_path)?);
    writeln!(w, "bin_low_rad,count")?;
    for (low, h) in edges.iter().zip(hist_acc.iter()) {
        writeln!(w, "{low:.16e},{h:.16e}")?;
    }
    drop(w);
    ctx.record("histogram.csv", "pooled phase-difference histogram");

    let mut max_corr = 0.0_f64;
    for i in 0..masks.len() {
        for j in (i + 1)..masks.len() {
            max_corr = max_corr
                .max(pairlab::shapeopt::mask_correlation(&masks[i], &masks[j], &id.weights)?);
        }
    }
    let mean_sep = seps.iter().sum::<f64>() / seps.len().max(1) as f64;
    ctx.write_metrics(&[
        ("mean_separation_rad".into(), mean_sep),
        ("max_pairwise_mask_correlation".into(), max_corr),
        ("runs".into(), runs as f64),
    ])
}

/// Difference-coordinate encoding through a pcp-class solution: the minus
/// projection restores the object while the plus projection does not.
fn diff_encoding(cfg: &ScenarioConfig, ctx: &mut RunContext) -> Result<()> {
    let grid = build_grid(cfg, ctx)?;
    let mut p = build_spdc(cfg, ctx, 13.0)?;
    p.sigma_k = cfg.section("spdc").f64_or("sigma_k_per_m", 0.0)?;
    let object = build_object(cfg, ctx, grid)?;
    let psi = difference_encoded_state(&object, &p)?;
    let f = odd_phase_symbol(&grid, ctx.seed ^ 0xD1FF);
    let sprime = pcp_solution(grid, &f)?;
    let out = two_photon(&sprime, &psi)?;

    let dmap = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Difference)?;
    let smap = sum_map(&grid)?;
    let minus = project_diff(&g2_from_pure(&out.state), &dmap)?;
    let plus = project_sum(&g2_from_pure(&out.state), &smap)?;
    ctx.write_both("object", &object.intensity(), "encoded object |t|^2")?;
    ctx.write_both(
        "gamma_minus",
        &minus.object_aligned(grid.n()),
        "difference projection (restores the object)",
    )?;
    ctx.write_both("gamma_plus", &plus.values, "sum projection (no object)")?;
    ctx.write_metrics(&[
        ("fidelity_minus".into(), fidelity_ncc(&minus, &object.intensity()).unwrap_or(0.0)),
        ("fidelity_plus".into(), fidelity_ncc(&plus, &object.intensity()).unwrap_or(0.0)),
    ])
}

/// Mixed-ensemble optimization showcase used by tests and docs: optimizing
/// with the separable guide converges to the identity mask; kept here so the
/// CLI surface and the library agree on the geometry.
#[allow(dead_code)]
pub fn rho0_identity_demo(seed: u64) -> Result<(f64, f64)> {
    let grid = Grid::new(16, 40e-6, Boundary::Circular)?;
    let p = biphoton::paper_default_spdc();
    let optics = biphoton::paper_default_optics();
    let rho0_in = separable_guide_ensemble(grid, &p, &optics)?;
    let f_in = fourier_lens(grid, 0.05, 804e-9)?;
    let rho0 = propagate_mixed(&f_in, &rho0_in)?;
    let slm_grid = f_in.grid_out;
    let s0 = thin_medium(slm_grid, &SpeckleSpec::thin(4.0, seed))?;
    let lens = fourier_lens(slm_grid, 0.05, 804e-9)?;
    let sys = compose(&[&s0, &lens])?;
    let layout = PhaseMask::tiled(&slm_grid, 8)?;
    let mut oc = OptConfig::new(8, 1500, seed);
    oc.plateau_window = 400;
    let (mask, _) = optimize_mixed(&sys, &rho0, &layout, &oc)?;
    let id = identity_mask(&sys, &layout, None);
    let deltas: Vec<f64> = mask
        .phases
        .iter()
        .zip(id.mask.phases.iter())
        .map(|(a, b)| pairlab::shapeopt::wrap_angle(a - b))
        .collect();
    let weights = vec![1.0; deltas.len()];
    let (_, resultant, std) = pairlab::shapeopt::circular_stats(&deltas, &weights);
    Ok((resultant, std))
}

/// Render a one-line-per-preset table.
pub fn preset_table() -> String {
    let mut out = String::new();
    for (name, desc, _) in crate::presets::PRESETS {
        let _ = writeln!(out, "{name:<18} {desc}");
    }
    out
}

/// The SLM-diagonal operator of a mask, exposed for scenario composition.
#[allow(dead_code)]
pub fn mask_operator(mask: &PhaseMask, grid: &Grid) -> Result<ScatteringMatrix> {
    slm_diagonal(mask, grid)
}
