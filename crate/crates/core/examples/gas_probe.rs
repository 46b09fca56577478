use flowboost_core::flow::{train, Architecture, TrainHyper};
use flowboost_core::geom::{feasibility, ProblemInstance, ProblemKind};
use flowboost_core::sampler::{gas_sample, terminal_refine, sample_prior, SamplerSettings, gauss_newton_project};
use flowboost_core::search::{generate_training_set, PolishSettings, PushParams, SrpSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let instance = ProblemInstance::new(ProblemKind::SpheresInCube, 3, 20, 1.0).unwrap();
    let params = PushParams {
        srp: SrpSchedule {
            outer_iters: 120,
            inner_steps: 30,
            perturb_scale: Some(0.03),
            ..Default::default()
        },
        polish: PolishSettings { max_iters: 200, ..Default::default() },
        ..Default::default()
    };
    let dataset = generate_training_set(&instance, 32, 1.0, &params, 606).unwrap();
    println!("best score {:.5}, cond of elite: {:?}", dataset[0].score, dataset[1].condition);
    let hyper = TrainHyper {
        epochs: 40,
        batch_size: 16,
        learning_rate: 2e-3,
        arch: Some(Architecture { width: 16, depth: 1, heads: 2, freq_count: 4, input_dim: 3, cond_dim: 4, ff_hidden: 32 }),
        penalty_weight_max: 0.05,
        seed: 606,
        ..Default::default()
    };
    let trained = train(&dataset, &instance, &hyper).unwrap();
    for scale in [0.6, 0.5, 0.4, 0.3, 0.2] {
        let mut condition = dataset[1].condition.clone();
        condition[0] *= scale;
        condition[3] *= scale;
        let settings = SamplerSettings { steps: 25, ..Default::default() };
        let out = gas_sample(&trained.params, &instance, 64, &condition, &settings, 999).unwrap();
        let rewards: Vec<f64> = out
            .iter()
            .map(|s| flowboost_core::reward::reward(&instance, s).unwrap())
            .collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rewards.len() as f64;
        let max = rewards.iter().copied().fold(f64::MIN, f64::max);
        println!(
            "scale {scale}: emitted {} r_t={:.4} mean {:.5} std {:.5} max {:.5}",
            out.len(), condition[0], mean, var.sqrt(), max
        );
    }
}
