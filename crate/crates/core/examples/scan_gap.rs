use flowboost_core::geom::{exact_star_discrepancy, PointConfiguration, ProblemInstance, ProblemKind};
use flowboost_core::sampler::sample_prior;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scan(config: &PointConfiguration, cells: usize, strict: &mut [u32], closed: &mut [u32]) -> f64 {
    let dim = cells + 1;
    let n = config.count as f64;
    strict.fill(0);
    closed.fill(0);
    for i in 0..config.count {
        let p = config.point(i);
        let sx = ((p[0] * cells as f64).floor() as usize + 1).min(dim);
        let sy = ((p[1] * cells as f64).floor() as usize + 1).min(dim);
        let cx = ((p[0] * cells as f64).ceil() as usize).min(dim);
        let cy = ((p[1] * cells as f64).ceil() as usize).min(dim);
        if sx < dim && sy < dim { strict[sx * dim + sy] += 1; }
        if cx < dim && cy < dim { closed[cx * dim + cy] += 1; }
    }
    for grid in [&mut *strict, &mut *closed] {
        for x in 0..dim { for y in 1..dim { grid[x*dim+y] += grid[x*dim+y-1]; } }
        for x in 1..dim { for y in 0..dim { grid[x*dim+y] += grid[(x-1)*dim+y]; } }
    }
    let mut best = 0.0f64;
    for x in 0..dim {
        let a = x as f64 / cells as f64;
        for y in 0..dim {
            let b = y as f64 / cells as f64;
            best = best.max(closed[x*dim+y] as f64 / n - a*b).max(a*b - strict[x*dim+y] as f64 / n);
        }
    }
    best
}

fn main() {
    // Find a failing set under the 2000-cell scan, then rescan it at 20000
    // cells: if the exact oracle is right, the gap shrinks about tenfold.
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cells = 2000;
    let dim = cells + 1;
    let mut strict = vec![0u32; dim * dim];
    let mut closed = vec![0u32; dim * dim];
    for idx in 0..100 {
        let n = rng.gen_range(1..=30usize);
        let coords: Vec<f64> = (0..2 * n).map(|_| rng.gen::<f64>()).collect();
        let c = PointConfiguration::new(2, n, coords).unwrap();
        let exact = exact_star_discrepancy(&c).unwrap();
        let approx = scan(&c, cells, &mut strict, &mut closed);
        let gap = exact - approx;
        if gap > 5e-4 {
            let fine_cells = 20000;
            let fine_dim = fine_cells + 1;
            let mut fs = vec![0u32; fine_dim * fine_dim];
            let mut fc = vec![0u32; fine_dim * fine_dim];
            let fine = scan(&c, fine_cells, &mut fs, &mut fc);
            println!(
                "set {idx} (n={n}): exact {exact:.8} scan2000 gap {gap:.3e} scan20000 gap {:.3e}",
                exact - fine
            );
            let _ = ProblemKind::StarDiscrepancy;
            let _ = sample_prior;
            return;
        }
    }
}
