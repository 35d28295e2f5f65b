//! Property tests over the tree and data invariants.

use imfn_core::data::make_split;
use imfn_core::memtree::{
    generate_trajectory_with_count, naive_trajectory, naive_trajectory_with_count, ZeroLeafMode,
};
use imfn_core::rng::Rng;
use imfn_core::sweeper::MemoryVector;
use imfn_core::teacher::Teacher;
use proptest::prelude::*;

fn small_teacher(seed: u64) -> Teacher {
    Teacher::new(4, 8, &mut Rng::new(seed))
}

fn latents(n: usize, d: usize, seed: u64) -> Vec<MemoryVector> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| MemoryVector::new((0..d).map(|_| rng.uniform_symmetric() as f32).collect()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn merge_and_invert_counts_follow_the_tree(depth in 0usize..6, seed in 0u64..1000) {
        let n = 1usize << depth;
        let teacher = small_teacher(seed);
        let zs = latents(n, 4, seed ^ 0xABCD);
        let (root, merges) = teacher.merge_up_with_count(&zs).unwrap();
        prop_assert_eq!(merges, n as u64 - 1);
        let (leaves, inversions) = teacher.invert_down_with_count(&root, n).unwrap();
        prop_assert_eq!(inversions, n as u64 - 1);
        prop_assert_eq!(leaves.len(), n);
    }

    #[test]
    fn trajectory_paths_agree_and_counts_match(depth in 0usize..5, seed in 0u64..1000) {
        let n = 1usize << depth;
        let teacher = small_teacher(seed);
        let zs = latents(n, 4, seed ^ 0x1234);
        let (fast, inc) =
            generate_trajectory_with_count(&teacher, &zs, ZeroLeafMode::ZeroLatent).unwrap();
        let (slow, naive) =
            naive_trajectory_with_count(&teacher, &zs, ZeroLeafMode::ZeroLatent).unwrap();
        prop_assert_eq!(fast, slow);
        prop_assert_eq!(inc, (n as u64 - 1) + n as u64 * depth as u64);
        prop_assert_eq!(naive, (n as u64 + 1) * (n as u64 - 1));
    }

    #[test]
    fn splits_partition_the_index_set(n in 1usize..500, seed in 0u64..1000, ratio in 0.05f64..0.95) {
        let split = make_split(n, ratio, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split.train.len(), (ratio * n as f64).floor() as usize);
    }

    #[test]
    fn naive_trajectory_is_deterministic(seed in 0u64..200) {
        let teacher = small_teacher(seed);
        let zs = latents(4, 4, seed);
        let a = naive_trajectory(&teacher, &zs, ZeroLeafMode::ZeroLatent).unwrap();
        let b = naive_trajectory(&teacher, &zs, ZeroLeafMode::ZeroLatent).unwrap();
        prop_assert_eq!(a, b);
    }
}
