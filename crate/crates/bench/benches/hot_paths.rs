use criterion::{black_box, criterion_group, criterion_main, Criterion};
use flowboost_core::flow::{velocity_forward, Architecture, ModelParams};
use flowboost_core::geom::{exact_star_discrepancy, PointConfiguration};
use flowboost_core::search::radii_lp;
use flowboost_core::surrogate::{
    heilbronn_softmin, overlap_energy, star_surrogate, HeilbronnSurrogateParams,
    StarSurrogateParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_config(dim: usize, n: usize, seed: u64) -> PointConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<f64> = (0..dim * n).map(|_| rng.gen::<f64>()).collect();
    PointConfiguration::new(dim, n, coords).unwrap()
}

fn bench_oracles(c: &mut Criterion) {
    let star30 = random_config(2, 30, 1);
    c.bench_function("exact_star_discrepancy_n30", |b| {
        b.iter(|| exact_star_discrepancy(black_box(&star30)).unwrap())
    });

    let heil13 = random_config(2, 13, 2);
    let hp = HeilbronnSurrogateParams::default();
    c.bench_function("heilbronn_softmin_n13_k100", |b| {
        b.iter(|| heilbronn_softmin(black_box(&heil13), &hp).unwrap())
    });

    let spheres55 = random_config(3, 55, 3);
    c.bench_function("overlap_energy_n55", |b| {
        b.iter(|| overlap_energy(black_box(&spheres55), 0.12, 200.0).unwrap())
    });

    let star20 = random_config(2, 20, 4);
    let sp = StarSurrogateParams {
        top_k: Some(64),
        ..Default::default()
    };
    c.bench_function("star_surrogate_n20_k64", |b| {
        b.iter(|| star_surrogate(black_box(&star20), &sp).unwrap())
    });
}

fn bench_lp(c: &mut Criterion) {
    let centers = random_config(2, 26, 5);
    c.bench_function("radii_lp_n26", |b| {
        b.iter(|| radii_lp(black_box(&centers)).unwrap())
    });
}

fn bench_model(c: &mut Criterion) {
    let arch = Architecture {
        width: 64,
        depth: 2,
        heads: 4,
        freq_count: 8,
        input_dim: 3,
        cond_dim: 4,
        ff_hidden: 256,
    };
    let mut params = ModelParams::init(arch, 7).unwrap();
    for (i, v) in params.head_w.data.iter_mut().enumerate() {
        *v = 1e-3 * (i % 17) as f64;
    }
    let config = random_config(3, 20, 8);
    let cond = vec![0.1, 20.0, 0.4, 0.2];
    c.bench_function("velocity_forward_w64_d2_n20", |b| {
        b.iter(|| velocity_forward(black_box(&params), &config, 0.4, &cond).unwrap())
    });
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_oracles, bench_lp, bench_model
);
criterion_main!(benches);
