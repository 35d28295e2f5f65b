//! Shared fixtures for the criterion benches.

use imfn_core::sweeper::MemoryVector;
use imfn_core::teacher::Teacher;
use imfn_core::Rng;

pub fn bench_teacher(memory_dim: usize) -> Teacher {
    Teacher::new(memory_dim, 16, &mut Rng::new(99))
}

pub fn random_latents(n: usize, memory_dim: usize, seed: u64) -> Vec<MemoryVector> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            MemoryVector::new((0..memory_dim).map(|_| rng.uniform_symmetric() as f32).collect())
        })
        .collect()
}
