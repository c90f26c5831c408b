use ndarray::Array2;
use num_complex::Complex64;
use std::time::Instant;

fn main() {
    let d = 1024usize;
    let a = Array2::<Complex64>::from_shape_fn((d, d), |(i, j)| {
        Complex64::new((i as f64 * 0.37 + j as f64 * 0.11).sin(), (i as f64 - j as f64).cos())
    });
    let b = a.t().to_owned();
    // warmup
    let c = a.dot(&b);
    let t0 = Instant::now();
    let c2 = a.dot(&b);
    let dt = t0.elapsed().as_secs_f64();
    let macs = (d as f64).powi(3);
    println!("ndarray dot d={d}: {:.3} s, {:.2} GcMAC/s  (checksum {:?})", dt, macs / dt / 1e9, c2[[0,0]] + c[[1,1]]);
}
