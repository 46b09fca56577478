use flowboost_core::geom::{feasibility, ProblemInstance, ProblemKind};
use flowboost_core::sampler::sample_prior;
use flowboost_core::search::{final_push, PushParams, SrpSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 12;
    let inst = ProblemInstance::new(ProblemKind::SpheresInCube, 3, n, 1.0).unwrap();
    let params = PushParams {
        srp: SrpSchedule {
            outer_iters: 500,
            perturb_scale: Some(0.03),
            ..Default::default()
        },
        ..Default::default()
    };
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = sample_prior(&inst, &mut rng);
        let s = final_push(&start, &inst, &params, seed ^ 0x5A5A).unwrap();
        let rep = feasibility(&s.config, &inst, s.score / 2.0);
        println!(
            "seed {seed}: score {:.5} pair_viol {:.3e} wall_viol {:.3e}",
            s.score, rep.max_pair_violation, rep.max_wall_violation
        );
        if seed == 0 {
            for i in 0..n {
                let p = &s.config.coords[3 * i..3 * i + 3];
                println!("  p{i}: {:.4} {:.4} {:.4}", p[0], p[1], p[2]);
            }
        }
    }
}
