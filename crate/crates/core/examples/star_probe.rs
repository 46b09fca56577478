use flowboost_core::geom::{exact_star_discrepancy, PointConfiguration, ProblemInstance, ProblemKind};
use flowboost_core::sampler::sample_prior;
use flowboost_core::search::{quasi_newton_polish, srp, PolishSettings, SrpSchedule};
use flowboost_core::surrogate::{uniform_grid, StarSurrogate, StarSurrogateParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[allow(clippy::too_many_arguments)]
fn run_one(
    inst: &ProblemInstance,
    critical: bool,
    grid_m: usize,
    tau: f64,
    anneal: (f64, f64),
    top_k: Option<usize>,
    step: f64,
    outer: usize,
    perturb: Option<f64>,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = sample_prior(inst, &mut rng);
    let params = StarSurrogateParams {
        grid_x: uniform_grid(grid_m),
        grid_y: uniform_grid(grid_m),
        tau_sigmoid: tau,
        tau_anneal: if tau < 0.0 { Some((0.02, -tau)) } else { None },
        top_k,
        ..Default::default()
    };
    let mut surr = StarSurrogate::new(inst.count, params, critical);
    let schedule = SrpSchedule {
        anneal: Some(anneal),
        step_size: step,
        outer_iters: outer,
        perturb_scale: perturb,
        ..Default::default()
    };
    let mut relaxed = srp(&start, &mut surr, &schedule, seed ^ 0xA5A5);
    relaxed.clamp_to_box(0.0, 1.0);
    let mut polished = quasi_newton_polish(&relaxed, &mut surr, &PolishSettings::default()).unwrap();
    polished.clamp_to_box(0.0, 1.0);
    let a = exact_star_discrepancy(&relaxed).unwrap();
    let b = exact_star_discrepancy(&polished).unwrap();
    let c = exact_star_discrepancy(&start).unwrap();
    a.min(b).min(c)
}

fn main() {
    let inst = ProblemInstance::new(ProblemKind::StarDiscrepancy, 2, 20, 1.0).unwrap();
    type Case = (&'static str, bool, usize, f64, (f64, f64), Option<usize>, f64, usize, Option<f64>);
    let cases: Vec<Case> = vec![
        ("G: tau 0.02->0.005 k64 o800", true, 16, -0.005, (40.0, 300.0), Some(64), 0.01, 800, None),
        ("H: tau 0.02->0.003 k64 o800", true, 16, -0.003, (40.0, 300.0), Some(64), 0.01, 800, None),
        ("I: tau 0.02->0.004 k96 o800", true, 16, -0.004, (40.0, 300.0), Some(96), 0.01, 800, None),
    ];
    for (name, critical, grid_m, tau, anneal, top_k, step, outer, perturb) in cases {
        let t0 = Instant::now();
        let mut results: Vec<f64> = (0..24)
            .map(|s| run_one(&inst, critical, grid_m, tau, anneal, top_k, step, outer, perturb, s))
            .collect();
        results.sort_by(|a, b| a.total_cmp(b));
        println!(
            "{name}: best {:.5} p25 {:.5} med {:.5} worst {:.5}  ({:.2}s/24)",
            results[0],
            results[6],
            results[12],
            results[23],
            t0.elapsed().as_secs_f64()
        );
    }
}
