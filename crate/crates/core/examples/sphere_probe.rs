use flowboost_core::geom::{ProblemInstance, ProblemKind};
use flowboost_core::sampler::sample_prior;
use flowboost_core::search::{final_push, PushParams, SrpSchedule};
use flowboost_core::surrogate::SphereSurrogateParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn run_one(n: usize, params: &PushParams, seed: u64) -> f64 {
    let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, n, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = sample_prior(&inst, &mut rng);
    final_push(&start, &inst, params, seed ^ 0x5A5A).unwrap().score
}

fn main() {
    let mk = |outer: usize, step: f64, perturb: Option<f64>, anneal: (f64, f64), ov: f64| PushParams {
        srp: SrpSchedule {
            outer_iters: outer,
            step_size: step,
            perturb_scale: perturb,
            anneal: Some(anneal),
            ..Default::default()
        },
        sphere: SphereSurrogateParams {
            overlap_weight: ov,
            ..Default::default()
        },
        ..Default::default()
    };
    let cases: Vec<(&str, PushParams)> = vec![
        ("o500 s.035 p.03 b40-300 ov1", mk(500, 0.035, Some(0.03), (40.0, 300.0), 1.0)),
        ("o800 s.035 p.03 b40-300 ov1", mk(800, 0.035, Some(0.03), (40.0, 300.0), 1.0)),
        ("o800 s.05 p.04 b40-300 ov1", mk(800, 0.05, Some(0.04), (40.0, 300.0), 1.0)),
        ("o800 s.035 p.03 b20-600 ov1", mk(800, 0.035, Some(0.03), (20.0, 600.0), 1.0)),
        ("o800 s.035 p.03 b40-300 ov.5", mk(800, 0.035, Some(0.03), (40.0, 300.0), 0.5)),
        ("o1200 s.035 p.025 b40-300 ov1", mk(1200, 0.035, Some(0.025), (40.0, 300.0), 1.0)),
    ];
    for (name, params) in cases {
        let t0 = Instant::now();
        let mut results: Vec<f64> = (0..8).map(|s| run_one(12, &params, s)).collect();
        results.sort_by(|a, b| b.total_cmp(a));
        println!(
            "n=12 {name}: best {:.5} med {:.5} worst {:.5} ({:.2}s/8)",
            results[0], results[4], results[7], t0.elapsed().as_secs_f64()
        );
    }
}
