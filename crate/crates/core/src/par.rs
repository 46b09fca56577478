//! Deterministic parallel fan-out. Per-item seeds derive from the base seed
//! and results are collected in index order, so any worker count produces
//! bit-identical output.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Process-global worker count; 0 means "let rayon decide".
static WORKERS: AtomicUsize = AtomicUsize::new(0);

pub fn set_workers(n: usize) {
    WORKERS.store(n, Ordering::SeqCst);
}

pub fn workers() -> usize {
    WORKERS.load(Ordering::SeqCst)
}

/// Map `f` over 0..count, preserving index order in the result.
pub fn run_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let n = workers();
    if n == 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if n > 0 {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(|| {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(&f).collect()
        }),
        Err(_) => (0..count).map(f).collect(),
    }
}

/// Sub-seed derivation for independent random streams within one sample.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-sample seed contract: sample i uses seed + i.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}
