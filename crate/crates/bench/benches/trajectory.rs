//! Incremental (Merkle-style) vs naive full-rebuild trajectory generation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use imfn_bench::{bench_teacher, random_latents};
use imfn_core::memtree::{generate_trajectory, naive_trajectory, ZeroLeafMode};
use std::hint::black_box;

fn bench_trajectory(c: &mut Criterion) {
    let teacher = bench_teacher(8);
    let mut group = c.benchmark_group("trajectory");
    for n in [8usize, 32, 128] {
        let latents = random_latents(n, 8, 7);
        group.bench_with_input(BenchmarkId::new("incremental", n), &latents, |b, zs| {
            b.iter(|| {
                generate_trajectory(black_box(&teacher), black_box(zs), ZeroLeafMode::ZeroLatent)
                    .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("naive", n), &latents, |b, zs| {
            b.iter(|| {
                naive_trajectory(black_box(&teacher), black_box(zs), ZeroLeafMode::ZeroLatent)
                    .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_trajectory);
criterion_main!(benches);
