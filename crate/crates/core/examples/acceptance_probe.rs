//! Calibration probe for the acceptance-scale runs.

use std::time::Instant;

use pairlab::biphoton::{guide_state, paper_default_spdc, separable_guide_ensemble};
use pairlab::lattice::{Boundary, Grid};
use pairlab::media::{compose, fourier_lens, thin_medium, PhaseMask, SpeckleSpec};
use pairlab::shapeopt::{
    circular_stats, identity_mask, mask_correlation, optimize, optimize_mixed, solution_distance,
    wrap_angle, InitialMask, OptConfig,
};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "5".into());
    match which.as_str() {
        "5" => probe_criterion5(),
        "7" => probe_criterion7(),
        "8" => probe_criterion8(),
        "12" => probe_criterion12(),
        _ => eprintln!("unknown probe"),
    }
}

fn probe_criterion5() {
    let t0 = Instant::now();
    let grid = Grid::new(32, 50e-6, Boundary::Circular).unwrap();
    let p = paper_default_spdc();
    let psi = guide_state(grid, &p, 4.3).unwrap();
    let s0 = thin_medium(grid, &SpeckleSpec::thin(2.0, 7101)).unwrap();
    let lens = fourier_lens(grid, 0.05, 804e-9).unwrap();
    let sm = compose(&[&s0, &lens]).unwrap();
    println!("setup: {:.1} s", t0.elapsed().as_secs_f64());

    let layout = PhaseMask::tiled(&grid, 16).unwrap();
    let cfg = OptConfig::new(16, 1500, 4242);
    let t1 = Instant::now();
    let (_, trace) = optimize(&sm, &psi, &layout, &cfg).unwrap();
    let gain = trace.best_curve().last().unwrap() / trace.initial_objective;
    println!(
        "criterion 5: steps {} gain {:.2} runtime {:.1} s",
        trace.steps.len(),
        gain,
        t1.elapsed().as_secs_f64()
    );
}

fn probe_criterion7() {
    let t0 = Instant::now();
    let grid = Grid::new(16, 40e-6, Boundary::Circular).unwrap();
    let p = paper_default_spdc();
    let cfg_opt = pairlab::biphoton::paper_default_optics();
    let rho0_in = separable_guide_ensemble(grid, &p, &cfg_opt).unwrap();
    // relay the input-plane ensemble to the SLM plane
    let f_in = fourier_lens(grid, 0.05, 804e-9).unwrap();
    let rho0 = pairlab::propagate::propagate_mixed(&f_in, &rho0_in).unwrap();
    let slm_grid = f_in.grid_out;
    let s0 = thin_medium(slm_grid, &SpeckleSpec::thin(4.0, 55)).unwrap();
    let lens = fourier_lens(slm_grid, 0.05, 804e-9).unwrap();
    let sm = compose(&[&s0, &lens]).unwrap();
    let layout = PhaseMask::tiled(&slm_grid, 8).unwrap();
    let mut cfg = OptConfig::new(8, 1500, 17);
    cfg.plateau_window = 400;
    let (stage1, trace) = optimize_mixed(&sm, &rho0, &layout, &cfg).unwrap();
    let gain = trace.best_curve().last().unwrap() / trace.initial_objective;
    // refinement stage: tiny partitions (coordinate-ascent-like)
    let mut cfg2 = OptConfig::new(8, 1500, 18);
    cfg2.partition_fraction = 0.02; // clamps to single-macropixel partitions
    cfg2.initial = pairlab::shapeopt::InitialMask::Keep;
    cfg2.plateau_window = 300;
    let (mask, trace2) = optimize_mixed(&sm, &rho0, &stage1, &cfg2).unwrap();
    let gain2 = trace2.best_curve().last().unwrap() / trace.initial_objective;
    println!("stage gains: {gain:.2} then {gain2:.2}");
    let id = identity_mask(&sm, &layout, None);

    // illumination per macropixel: ensemble singles intensity at the SLM
    let mut illum = vec![0.0_f64; layout.macro_count()];
    for comp in &rho0.components {
        for (mf, pixels) in layout.pixel_map.iter().enumerate() {
            for &px in pixels {
                illum[mf] += comp.weight
                    * (comp.factor_i[px].norm_sqr() + comp.factor_s[px].norm_sqr());
            }
        }
    }
    let max_illum = illum.iter().cloned().fold(0.0, f64::max);

    let deltas: Vec<f64> = mask
        .phases
        .iter()
        .zip(id.mask.phases.iter())
        .map(|(a, b)| wrap_angle(a - b))
        .collect();
    for frac in [0.0, 0.05, 0.1, 0.2] {
        let lit_deltas: Vec<f64> = deltas
            .iter()
            .zip(illum.iter().zip(id.lit.iter()))
            .filter(|(_, (&w, &l))| l && w >= frac * max_illum)
            .map(|(&d, _)| d)
            .collect();
        let weights = vec![1.0; lit_deltas.len()];
        let (_, resultant, std) = circular_stats(&lit_deltas, &weights);
        println!(
            "  illum-frac {frac}: lit {}/{} resultant {:.3} circ-std {:.3} rad",
            lit_deltas.len(),
            deltas.len(),
            resultant,
            std
        );
    }
    use pairlab::shapeopt::{objective_value_mixed, ObjectiveKind, Target};
    let zero = PhaseMask::tiled(&slm_grid, 8).unwrap();
    let obj_zero =
        objective_value_mixed(&sm, &zero, &rho0, Target::Center, ObjectiveKind::CenterBin).unwrap();
    let obj_found =
        objective_value_mixed(&sm, &mask, &rho0, Target::Center, ObjectiveKind::CenterBin).unwrap();
    let obj_id =
        objective_value_mixed(&sm, &id.mask, &rho0, Target::Center, ObjectiveKind::CenterBin)
            .unwrap();
    println!(
        "objectives: zero {obj_zero:.3e} found {obj_found:.3e} identity {obj_id:.3e} (found/id = {:.2})",
        obj_found / obj_id
    );
    println!(
        "criterion 7: steps {} gain {:.2} runtime {:.1} s",
        trace.steps.len(),
        gain,
        t0.elapsed().as_secs_f64()
    );
}

fn probe_criterion8() {
    let t0 = Instant::now();
    let grid = Grid::new(16, 100e-6, Boundary::Circular).unwrap();
    let p = paper_default_spdc();
    let psi = guide_state(grid, &p, 4.3).unwrap();
    let s0 = thin_medium(grid, &SpeckleSpec::thin(2.0, 808)).unwrap();
    let lens = fourier_lens(grid, 0.05, 804e-9).unwrap();
    let sm = compose(&[&s0, &lens]).unwrap();
    let layout = PhaseMask::tiled(&grid, 8).unwrap();
    let id = identity_mask(&sm, &layout, None);

    let mut masks = Vec::new();
    for seed in 0..10u64 {
        let mut cfg = OptConfig::new(8, 500, 1000 + seed);
        cfg.initial = InitialMask::RandomUniform;
        cfg.plateau_window = 150;
        let (mask, trace) = optimize(&sm, &psi, &layout, &cfg).unwrap();
        let gain = trace.best_curve().last().unwrap() / trace.initial_objective;
        masks.push(mask);
        print!("g{gain:.1} ");
    }
    println!();
    let weights: Vec<f64> = id.weights.clone();
    let mut seps = Vec::new();
    for m in &masks {
        let dist = solution_distance(m, &id.mask, &weights).unwrap();
        seps.push(dist.separation);
    }
    let mean_sep = seps.iter().sum::<f64>() / seps.len() as f64;
    let mut max_corr = 0.0_f64;
    for i in 0..masks.len() {
        for j in (i + 1)..masks.len() {
            max_corr = max_corr.max(mask_correlation(&masks[i], &masks[j], &weights).unwrap());
        }
    }
    println!(
        "criterion 8: separations {:?} mean {:.3} max pairwise corr {:.3} runtime {:.1} s",
        seps.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>(),
        mean_sep,
        max_corr,
        t0.elapsed().as_secs_f64()
    );
}

fn probe_criterion12() {
    let grid = Grid::new(32, 50e-6, Boundary::Circular).unwrap();
    let p = paper_default_spdc();
    let psi = guide_state(grid, &p, 4.3).unwrap();
    let s0 = thin_medium(grid, &SpeckleSpec::thin(2.0, 1212)).unwrap();
    let lens = fourier_lens(grid, 0.05, 804e-9).unwrap();
    let sm = compose(&[&s0, &lens]).unwrap();

    use pairlab::correlate::{g2_from_pure, peak_metrics, project_sum};
    use pairlab::lattice::{MapMode, MapSign, SumCoordinateMap};
    use pairlab::shapeopt::propagate_slm;
    let map = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).unwrap();

    for (macro_n, steps) in [(8usize, 600usize), (16, 1500), (32, 2500)] {
        let t0 = Instant::now();
        let layout = PhaseMask::tiled(&grid, macro_n).unwrap();
        let cfg = OptConfig::new(macro_n, steps, 2024);
        let (mask, trace) = optimize(&sm, &psi, &layout, &cfg).unwrap();
        let out = propagate_slm(&sm, &mask, &psi).unwrap();
        let img = project_sum(&g2_from_pure(&out.state), &map).unwrap();
        let metrics = peak_metrics(&img);
        println!(
            "macro {macro_n:>2}: steps {} gain {:.1} fwhm {:.2} contrast {:.2} runtime {:.0} s",
            trace.steps.len(),
            trace.best_curve().last().unwrap() / trace.initial_objective,
            metrics.fwhm_px,
            metrics.contrast,
            t0.elapsed().as_secs_f64()
        );
    }
}
