//! Time-tagged detection events: forward synthesis from a G2 model, windowed
//! coincidence pairing, accidental estimation from singles, and correlation
//! images with background subtraction.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};

use crate::correlate::CorrelationImage;
use crate::error::{Error, Result};
use crate::lattice::SumCoordinateMap;
use crate::propagate::G2Matrix;

/// One photon detection: pixel position and timestamp in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t_ns: f64,
}

/// Synthesis parameters recorded alongside an event list.
#[derive(Debug, Clone, Copy, Default)]
pub struct EventMeta {
    pub pair_rate: f64,
    pub noise_rate: f64,
    pub jitter_ns: f64,
    pub seed: u64,
}

/// Time-ordered photon detections over a duration.
#[derive(Debug, Clone)]
pub struct EventList {
    pub grid_n: usize,
    pub events: Vec<Event>,
    pub duration_s: f64,
    pub meta: EventMeta,
}

impl EventList {
    /// Spatial histogram of all events (the singles image).
    pub fn singles_histogram(&self) -> Array2<f64> {
        let mut h = Array2::zeros((self.grid_n, self.grid_n));
        for e in &self.events {
            h[[e.x as usize, e.y as usize]] += 1.0;
        }
        h
    }
}

/// Indices into an event list forming accepted coincidence pairs.
#[derive(Debug, Clone)]
pub struct CoincidenceSet {
    pub pairs: Vec<(usize, usize)>,
    pub window_ns: f64,
}

/// Draw a synthetic event list from a G2 model: pair arrivals are a Poisson
/// process at `pair_rate`, pair positions are drawn from g2 (normalized
/// internally), each photon's timestamp gets Gaussian jitter of sigma
/// `jitter_ns`, and uniform noise photons arrive at `noise_rate`. The merged
/// list is time-sorted and fully determined by the seed. `quantize_ns`
/// optionally snaps timestamps to camera ticks (1.56 ns for the real device).
#[allow(clippy::too_many_arguments)]
pub fn synthesize_events(
    g2: &G2Matrix,
    pair_rate: f64,
    noise_rate: f64,
    duration_s: f64,
    jitter_ns: f64,
    seed: u64,
    quantize_ns: Option<f64>,
) -> Result<EventList> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidParameter(format!("duration must be positive, got {duration_s}")));
    }
    if pair_rate < 0.0 || noise_rate < 0.0 || jitter_ns < 0.0 {
        return Err(Error::InvalidParameter("rates and jitter must be nonnegative".into()));
    }
    let total = g2.total();
    if pair_rate > 0.0 && total == 0.0 {
        return Err(Error::ZeroInput("G2 model is identically zero".into()));
    }
    let grid = g2.grid;
    let n = grid.n();
    let d = grid.dim();
    let duration_ns = duration_s * 1e9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events: Vec<Event> = Vec::new();

    if pair_rate > 0.0 {
        // cumulative distribution over flattened (i, s) pairs
        let mut cdf = Vec::with_capacity(d * d);
        let mut acc = 0.0;
        for v in g2.values.iter() {
            acc += v / total;
            cdf.push(acc);
        }
        let n_pairs = Poisson::new(pair_rate * duration_s)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(&mut rng) as usize;
        let jitter = Normal::new(0.0, jitter_ns.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for _ in 0..n_pairs {
            let t0 = rng.gen::<f64>() * duration_ns;
            let u = rng.gen::<f64>();
            let flat = cdf.partition_point(|&c| c < u).min(d * d - 1);
            let (i, s) = (flat / d, flat % d);
            let (ix, iy) = grid.unflatten(i);
            let (sx, sy) = grid.unflatten(s);
            for (x, y) in [(ix, iy), (sx, sy)] {
                let dt = if jitter_ns > 0.0 { jitter.sample(&mut rng) } else { 0.0 };
                events.push(Event {
                    x: x as u16,
                    y: y as u16,
                    t_ns: (t0 + dt).clamp(0.0, duration_ns),
                });
            }
        }
    }

    if noise_rate > 0.0 {
        let n_noise = Poisson::new(noise_rate * duration_s)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..n_noise {
            events.push(Event {
                x: rng.gen_range(0..n) as u16,
                y: rng.gen_range(0..n) as u16,
                t_ns: rng.gen::<f64>() * duration_ns,
            });
        }
    }

    if let Some(tick) = quantize_ns {
        if !(tick > 0.0) {
            return Err(Error::InvalidParameter("quantization tick must be positive".into()));
        }
        for e in events.iter_mut() {
            e.t_ns = (e.t_ns / tick).round() * tick;
        }
    }

    events.sort_by(|a, b| a.t_ns.total_cmp(&b.t_ns));
    Ok(EventList {
        grid_n: n,
        events,
        duration_s,
        meta: EventMeta { pair_rate, noise_rate, jitter_ns, seed },
    })
}

/// Greedy earliest-first coincidence pairing: walk the time-sorted list and
/// pair an event with its immediate successor when |t1 - t2| < window_ns;
/// each event is used at most once and unmatched events are discarded.
pub fn pair_coincidences(events: &EventList, window_ns: f64) -> CoincidenceSet {
    let mut pairs = Vec::new();
    let ev = &events.events;
    let mut i = 0usize;
    while i + 1 < ev.len() {
        if (ev[i + 1].t_ns - ev[i].t_ns).abs() < window_ns {
            pairs.push((i, i + 1));
            i += 2;
        } else {
            i += 1;
        }
    }
    CoincidenceSet { pairs, window_ns }
}

/// Accidental-coincidence estimate from the singles: the sum projection of
/// the outer product of the singles histogram with itself, scaled to the
/// expected accidental-pair count N^2 w / T (the rate^2 * window * duration
/// convention).
pub fn accidental_map(
    events: &EventList,
    map: &SumCoordinateMap,
    window_ns: f64,
) -> Result<CorrelationImage> {
    if map.n() != events.grid_n {
        return Err(Error::DimensionMismatch(format!(
            "map n = {} vs event grid n = {}",
            map.n(),
            events.grid_n
        )));
    }
    let h = events.singles_histogram();
    let n = events.grid_n;
    let side = map.out_side();
    let mut values = Array2::zeros((side, side));
    let duration_ns = events.duration_s * 1e9;
    let scale = window_ns / duration_ns;
    // outer product of the singles with itself, projected per axis
    for a1 in 0..n {
        for b1 in 0..n {
            let h1 = h[[a1, b1]];
            if h1 == 0.0 {
                continue;
            }
            for a2 in 0..n {
                for b2 in 0..n {
                    let h2 = h[[a2, b2]];
                    if h2 == 0.0 {
                        continue;
                    }
                    let (ba, bb) = map.bin_of((a1, b1), (a2, b2));
                    values[[ba, bb]] += h1 * h2 * scale;
                }
            }
        }
    }
    let grid_stub = crate::lattice::Grid::new(n, 1.0, crate::lattice::Boundary::Circular)?;
    let cb = map.center_bin_axis(&grid_stub);
    Ok(CorrelationImage { values, map: *map, center_bin: (cb, cb), pitch: 1.0 })
}

/// Correlation image from matched pairs: histogram of pair position sums (or
/// differences) minus the accidental estimate, clamped at zero.
pub fn corr_image_from_events(
    events: &EventList,
    pairs: &CoincidenceSet,
    accidentals: Option<&CorrelationImage>,
    map: &SumCoordinateMap,
) -> Result<CorrelationImage> {
    if map.n() != events.grid_n {
        return Err(Error::DimensionMismatch(format!(
            "map n = {} vs event grid n = {}",
            map.n(),
            events.grid_n
        )));
    }
    if let Some(acc) = accidentals {
        if acc.map != *map {
            return Err(Error::DimensionMismatch("accidental map differs from target map".into()));
        }
    }
    let side = map.out_side();
    let mut values: Array2<f64> = Array2::zeros((side, side));
    for &(ia, ib) in &pairs.pairs {
        let e1 = &events.events[ia];
        let e2 = &events.events[ib];
        let bin = map.bin_of((e1.x as usize, e1.y as usize), (e2.x as usize, e2.y as usize));
        values[bin] += 1.0;
    }
    if let Some(acc) = accidentals {
        for (v, a) in values.iter_mut().zip(acc.values.iter()) {
            *v = (*v - *a).max(0.0f64);
        }
    }
    let grid_stub = crate::lattice::Grid::new(events.grid_n, 1.0, crate::lattice::Boundary::Circular)?;
    let cb = map.center_bin_axis(&grid_stub);
    Ok(CorrelationImage { values, map: *map, center_bin: (cb, cb), pitch: 1.0 })
}

/// Write events as CSV: header `x,y,t_ns`, one event per line, timestamps
/// with 3 decimal places.
pub fn write_events_csv(path: &std::path::Path, events: &EventList) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,t_ns")?;
    for e in &events.events {
        writeln!(w, "{},{},{:.3}", e.x, e.y, e.t_ns)?;
    }
    w.flush()?;
    Ok(())
}

/// Read events from CSV in arbitrary line order; the list is re-sorted by
/// timestamp. The duration is taken as the latest timestamp rounded up to a
/// whole second (metadata is not stored in the CSV).
pub fn read_events_csv(path: &std::path::Path, grid_n: usize) -> Result<EventList> {
    use std::io::BufRead;
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut events = Vec::new();
    let mut max_t = 0.0_f64;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        if ln == 0 {
            if line.trim() != "x,y,t_ns" {
                return Err(Error::Format(format!("bad event CSV header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!("line {}: expected x,y,t_ns", ln + 1)));
        }
        let x: u16 = parts[0].trim().parse().map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
        let y: u16 = parts[1].trim().parse().map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
        let t: f64 = parts[2].trim().parse().map_err(|e| Error::Format(format!("line {}: {e}", ln + 1)))?;
        if x as usize >= grid_n || y as usize >= grid_n {
            return Err(Error::Format(format!("line {}: pixel ({x}, {y}) outside n = {grid_n}", ln + 1)));
        }
        max_t = max_t.max(t);
        events.push(Event { x, y, t_ns: t });
    }
    events.sort_by(|a, b| a.t_ns.total_cmp(&b.t_ns));
    Ok(EventList {
        grid_n,
        events,
        duration_s: (max_t / 1e9).ceil().max(1e-9),
        meta: EventMeta::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biphoton::{desk_optics, input_plane_state, ObjectImage, SpdcParams};
    use crate::correlate::{g2_from_pure, ncc_zero_shift, project_sum};
    use crate::lattice::{Boundary, Grid, MapMode, MapSign};

    fn circ(n: usize) -> Grid {
        Grid::new(n, 1.0, Boundary::Circular).unwrap()
    }

    fn flat_g2(grid: Grid) -> G2Matrix {
        G2Matrix::new(grid, Array2::from_elem((grid.dim(), grid.dim()), 1.0)).unwrap()
    }

    fn object_g2(n: usize, seed: u64) -> (G2Matrix, Grid, ObjectImage) {
        let grid = circ(n);
        let object = ObjectImage::random_binary(grid, 0.4, seed);
        let p = SpdcParams::from_widths(0.0, 4.7e3, 402e-9).unwrap();
        let psi = input_plane_state(&object, &p, &desk_optics()).unwrap();
        (g2_from_pure(&psi), grid, object)
    }

    #[test]
    fn pure_noise_has_poisson_count() {
        let grid = circ(8);
        let g2 = flat_g2(grid);
        let rate = 5e4;
        let dur = 0.2;
        let ev = synthesize_events(&g2, 0.0, rate, dur, 0.0, 7, None).unwrap();
        let lambda = rate * dur;
        let dev = (ev.events.len() as f64 - lambda).abs();
        assert!(dev <= 3.0 * lambda.sqrt(), "count {} vs lambda {lambda}", ev.events.len());
        assert!(ev.events.windows(2).all(|w| w[0].t_ns <= w[1].t_ns));
    }

    #[test]
    fn noiseless_pairs_are_exactly_coincident() {
        let (g2, _, _) = object_g2(8, 1);
        let ev = synthesize_events(&g2, 2e4, 0.0, 0.05, 0.0, 3, None).unwrap();
        assert_eq!(ev.events.len() % 2, 0);
        let set = pair_coincidences(&ev, 1e-6);
        assert_eq!(set.pairs.len(), ev.events.len() / 2);
        for &(a, b) in &set.pairs {
            assert_eq!(ev.events[a].t_ns, ev.events[b].t_ns);
        }
    }

    #[test]
    fn pair_positions_follow_g2_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let (g2, grid, _) = object_g2(8, 5);
        let ev = synthesize_events(&g2, 1e5, 0.0, 1.0, 0.0, 11, None).unwrap();
        let set = pair_coincidences(&ev, 1e-6);
        let d = grid.dim();
        let mut counts = vec![0.0_f64; d * d];
        for &(a, b) in &set.pairs {
            let e1 = &ev.events[a];
            let e2 = &ev.events[b];
            let i = grid.flatten(e1.x as usize, e1.y as usize);
            let s = grid.flatten(e2.x as usize, e2.y as usize);
            // photon order within a pair is arbitrary; fold to (min, max)
            counts[i.min(s) * d + i.max(s)] += 1.0;
        }
        let total_pairs = set.pairs.len() as f64;
        let g2_total = g2.total();
        // fold the model the same way and keep cells with expected >= 5
        let mut chi2 = 0.0;
        let mut dof = 0i64;
        for i in 0..d {
            for s in i..d {
                let p = if i == s {
                    g2.values[[i, s]] / g2_total
                } else {
                    (g2.values[[i, s]] + g2.values[[s, i]]) / g2_total
                };
                let expected = p * total_pairs;
                if expected >= 5.0 {
                    let o = counts[i * d + s];
                    chi2 += (o - expected) * (o - expected) / expected;
                    dof += 1;
                }
            }
        }
        assert!(dof > 50, "need enough populated cells, got {dof}");
        let dist = ChiSquared::new((dof - 1) as f64).unwrap();
        let p_value = 1.0 - dist.cdf(chi2);
        assert!(p_value > 0.01, "chi2 = {chi2:.1} with {dof} cells, p = {p_value:.4}");
    }

    #[test]
    fn pairing_examples_and_greedy_rule() {
        let mk = |ts: &[f64]| EventList {
            grid_n: 4,
            events: ts.iter().map(|&t| Event { x: 0, y: 0, t_ns: t }).collect(),
            duration_s: 1e-6,
            meta: EventMeta::default(),
        };
        let empty = mk(&[]);
        assert!(pair_coincidences(&empty, 6.0).pairs.is_empty());

        let two = mk(&[10.0, 15.0]);
        assert_eq!(pair_coincidences(&two, 6.0).pairs, vec![(0, 1)]);

        // 0, 4, 8: greedy pairs (0, 4) and leaves 8 unmatched
        let three = mk(&[0.0, 4.0, 8.0]);
        assert_eq!(pair_coincidences(&three, 6.0).pairs, vec![(0, 1)]);

        // strict window: exactly 6 ns apart is not a pair
        let edge = mk(&[0.0, 6.0]);
        assert!(pair_coincidences(&edge, 6.0).pairs.is_empty());
    }

    #[test]
    fn accidental_map_of_uniform_singles_is_pyramid() {
        let grid = circ(4);
        let map = SumCoordinateMap::new(&grid, MapMode::Linear, MapSign::Sum).unwrap();
        // hand-built uniform singles: one event per pixel
        let mut events = Vec::new();
        for a in 0..4u16 {
            for b in 0..4u16 {
                events.push(Event { x: a, y: b, t_ns: (a * 4 + b) as f64 * 1000.0 });
            }
        }
        let ev = EventList { grid_n: 4, events, duration_s: 1.0, meta: EventMeta::default() };
        let acc = accidental_map(&ev, &map, 6.0).unwrap();
        // per-axis pair counts over the sum b: 1,2,3,4,3,2,1 (triangular)
        let tri = [1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0];
        let scale = 6.0 / 1e9;
        for a in 0..7 {
            for b in 0..7 {
                let expect = tri[a] * tri[b] * scale;
                assert!((acc.values[[a, b]] - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn accidental_rate_matches_analytic_estimate_over_seeds() {
        let grid = circ(8);
        let g2 = flat_g2(grid);
        let rate = 2e4_f64; // singles/s
        let dur = 0.1_f64;
        let window = 50.0_f64; // ns
        let analytic = rate * rate * (window * 1e-9) * dur; // = 1.0 expected... scaled below
        let mut est_sum = 0.0;
        let mut greedy_sum = 0.0;
        let seeds = 50u64;
        for seed in 0..seeds {
            let ev = synthesize_events(&g2, 0.0, rate, dur, 0.0, 900 + seed, None).unwrap();
            let map = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).unwrap();
            let acc = accidental_map(&ev, &map, window).unwrap();
            est_sum += acc.total();
            greedy_sum += pair_coincidences(&ev, window).pairs.len() as f64;
        }
        let est_mean = est_sum / seeds as f64;
        let greedy_mean = greedy_sum / seeds as f64;
        assert!(
            (est_mean - analytic).abs() / analytic <= 0.2,
            "estimate {est_mean:.2} vs analytic {analytic:.2}"
        );
        assert!(
            (greedy_mean - analytic).abs() / analytic <= 0.2,
            "greedy count {greedy_mean:.2} vs analytic {analytic:.2}"
        );
    }

    #[test]
    fn event_histogram_converges_to_analytic_projection() {
        let (g2, grid, _) = object_g2(8, 21);
        let map = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).unwrap();
        let analytic = project_sum(&g2, &map).unwrap();

        let ev = synthesize_events(&g2, 1e5, 0.0, 1.0, 0.0, 5, None).unwrap();
        let set = pair_coincidences(&ev, 1e-6);
        let img = corr_image_from_events(&ev, &set, None, &map).unwrap();
        let corr = ncc_zero_shift(&img.values, &analytic.values).unwrap();
        assert!(corr >= 0.95, "NCC at 1e5 pairs = {corr}");

        let ev = synthesize_events(&g2, 1e6, 0.0, 1.0, 0.0, 6, None).unwrap();
        let set = pair_coincidences(&ev, 1e-6);
        let img = corr_image_from_events(&ev, &set, None, &map).unwrap();
        let corr = ncc_zero_shift(&img.values, &analytic.values).unwrap();
        assert!(corr >= 0.99, "NCC at 1e6 pairs = {corr}");
    }

    #[test]
    fn empty_pair_set_gives_zero_image() {
        let grid = circ(4);
        let map = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).unwrap();
        let ev = EventList { grid_n: 4, events: vec![], duration_s: 1.0, meta: EventMeta::default() };
        let set = pair_coincidences(&ev, 6.0);
        let img = corr_image_from_events(&ev, &set, None, &map).unwrap();
        assert_eq!(img.total(), 0.0);
    }

    #[test]
    fn subtraction_recovers_genuine_image_under_noise() {
        // raw = genuine + accidentals; subtracting the singles-based estimate
        // moves the histogram back toward the analytic genuine image
        let (g2, grid, _) = object_g2(8, 33);
        let map = SumCoordinateMap::new(&grid, MapMode::Circular, MapSign::Sum).unwrap();
        let analytic = project_sum(&g2, &map).unwrap();

        // strong uniform noise, 30 ns jitter, 6 ns window
        let ev = synthesize_events(&g2, 4e4, 8e5, 1.0, 0.0, 44, None).unwrap();
        let set = pair_coincidences(&ev, 6.0);
        let acc = accidental_map(&ev, &map, set.window_ns).unwrap();
        let raw = corr_image_from_events(&ev, &set, None, &map).unwrap();
        let sub = corr_image_from_events(&ev, &set, Some(&acc), &map).unwrap();

        let ncc_raw = ncc_zero_shift(&raw.values, &analytic.values).unwrap();
        let ncc_sub = ncc_zero_shift(&sub.values, &analytic.values).unwrap();
        assert!(ncc_sub >= 0.9, "subtracted NCC {ncc_sub}");
        assert!(ncc_sub >= ncc_raw - 1e-9, "subtraction must not hurt: {ncc_sub} vs {ncc_raw}");
    }

    #[test]
    fn determinism_per_seed() {
        let (g2, _, _) = object_g2(6, 2);
        let a = synthesize_events(&g2, 1e4, 5e3, 0.3, 2.0, 77, Some(1.56)).unwrap();
        let b = synthesize_events(&g2, 1e4, 5e3, 0.3, 2.0, 77, Some(1.56)).unwrap();
        assert_eq!(a.events.len(), b.events.len());
        for (x, y) in a.events.iter().zip(b.events.iter()) {
            assert_eq!(x.x, y.x);
            assert_eq!(x.y, y.y);
            assert_eq!(x.t_ns.to_bits(), y.t_ns.to_bits());
        }
    }

    #[test]
    fn csv_roundtrip_resorts_shuffled_lines() {
        let (g2, _, _) = object_g2(6, 3);
        let ev = synthesize_events(&g2, 5e3, 1e3, 0.1, 1.0, 8, None).unwrap();
        let mut path = std::env::temp_dir();
        path.push(format!("pairlab_events_{}.csv", std::process::id()));
        write_events_csv(&path, &ev).unwrap();

        // shuffle the data lines
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let third = lines.len() / 3;
        lines.rotate_left(third);
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        std::fs::write(&path, shuffled).unwrap();

        let back = read_events_csv(&path, 6).unwrap();
        assert_eq!(back.events.len(), ev.events.len());
        for (a, b) in back.events.iter().zip(ev.events.iter()) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
            assert!((a.t_ns - b.t_ns).abs() <= 5e-4); // 3-decimal CSV rounding
        }
        std::fs::remove_file(&path).ok();
    }

    proptest::proptest! {
        #[test]
        fn window_monotonicity(seed in 0u64..30) {
            let grid = circ(4);
            let g2 = flat_g2(grid);
            let ev = synthesize_events(&g2, 2e3, 2e3, 0.05, 3.0, seed, None).unwrap();
            let mut prev = 0usize;
            for w in [0.5, 1.0, 2.0, 5.0, 10.0, 50.0] {
                let count = pair_coincidences(&ev, w).pairs.len();
                proptest::prop_assert!(count >= prev);
                prev = count;
            }
        }
    }
}
