use pairlab::lattice::{Boundary, Grid};
use pairlab::media::{thick_medium, SpeckleSpec};

fn main() {
    for (n, ls, sig) in [(16usize, 1.2, 3.0), (16, 1.2, 2.0), (24, 1.2, 3.0)] {
        let grid = Grid::new(n, 1.0, Boundary::Circular).unwrap();
        for seed in [77u64, 1, 2] {
            let s = thick_medium(grid, &SpeckleSpec::thick(ls, sig, seed)).unwrap();
            let mut worst = 0.0f64;
            for col in 0..s.dim_in() {
                let cq = grid.unflatten(col);
                let (mut m0, mut m1, mut e_tot) = (0.0, 0.0, 0.0);
                for row in 0..s.dim_out() {
                    let e = s.m[[row, col]].norm_sqr();
                    let p = grid.unflatten(row);
                    let wrap = |a: usize, b: usize| -> f64 {
                        let mut d = (a as isize - b as isize).rem_euclid(n as isize);
                        if d > n as isize / 2 { d -= n as isize; }
                        d as f64
                    };
                    m0 += e * wrap(p.0, cq.0);
                    m1 += e * wrap(p.1, cq.1);
                    e_tot += e;
                }
                worst = worst.max((m0 / e_tot).abs()).max((m1 / e_tot).abs());
            }
            println!("n={n} ls={ls} sig={sig} seed={seed}: worst |centroid - c| = {worst:.3}");
        }
    }
}
