//! Exact-inverse tree roundtrip on hand-built linear sweepers.
//!
//! Leaves are confined to the first r coordinates. The level-l merge stacks
//! the live r*2^l block of the left child into coordinates 0..r*2^l and the
//! right child's block into the next r*2^l coordinates; its weight matrix
//! has orthonormal rows, so the transpose is the pseudo-inverse and inverts
//! the merge exactly on that subspace. With d >= r*T the whole tree is
//! losslessly invertible and `invert_down(merge_up(leaves))` must reproduce
//! the leaves bit for bit, which also pins down the pairing convention
//! (left = even index) and leaf ordering.

use imfn_core::nn::{Activation, Mlp};
use imfn_core::rng::Rng;
use imfn_core::sweeper::{MemoryVector, Sweeper};
use imfn_core::teacher::Teacher;

/// One-layer identity-activation net with all-zero weights.
fn blank_linear(in_dim: usize, out_dim: usize) -> Mlp {
    let mut rng = Rng::new(0);
    let mut net = Mlp::new(&[in_dim, out_dim], &[Activation::Identity], &mut rng).unwrap();
    net.layer_mut(0).weight_mut().fill(0.0);
    net.layer_mut(0).bias_mut().fill(0.0);
    net
}

/// Stacking sweeper for block size m = r * 2^level.
fn stacking_sweeper(level: usize, d: usize, block: usize) -> Sweeper {
    assert!(2 * block <= d, "stacked blocks must fit in d");
    let mut merge = blank_linear(2 * d, d);
    {
        let w = merge.layer_mut(0).weight_mut();
        for j in 0..block {
            w[j * 2 * d + j] = 1.0; // left block -> coords 0..m
            w[(block + j) * 2 * d + d + j] = 1.0; // right block -> coords m..2m
        }
    }
    // The inverter is the transpose of the merge: for a merge with
    // orthonormal rows this is exactly its pseudo-inverse.
    let mut invert = blank_linear(d, 2 * d);
    {
        let w = invert.layer_mut(0).weight_mut();
        for j in 0..block {
            w[j * d + j] = 1.0; // left block back from coords 0..m
            w[(d + j) * d + block + j] = 1.0; // right block back from coords m..2m
        }
    }
    Sweeper::from_nets(level, merge, invert).unwrap()
}

fn rank_r_leaf(r: usize, d: usize, rng: &mut Rng) -> MemoryVector {
    let mut v = vec![0.0f32; d];
    for slot in v.iter_mut().take(r) {
        *slot = rng.uniform_symmetric() as f32;
    }
    MemoryVector::new(v)
}

#[test]
fn linear_sweepers_invert_the_tree_exactly() {
    let r = 2;
    let d = 16;
    let t_len = 4; // r * t_len = 8 <= d
    let mut rng = Rng::new(42);
    let mut teacher = Teacher::new(d, 8, &mut rng);
    for level in 0..2 {
        teacher.set_sweeper(level, stacking_sweeper(level, d, r << level)).unwrap();
    }

    let leaves: Vec<MemoryVector> = (0..t_len).map(|_| rank_r_leaf(r, d, &mut rng)).collect();
    let root = teacher.merge_up(&leaves).unwrap();
    let recovered = teacher.invert_down(&root, t_len).unwrap();
    assert_eq!(recovered.len(), t_len);
    for (i, (orig, rec)) in leaves.iter().zip(&recovered).enumerate() {
        assert_eq!(orig.as_slice(), rec.as_slice(), "leaf {i} not recovered bit-exactly");
    }
}

#[test]
fn linear_sweepers_expose_leaf_order_in_the_root() {
    // With the stacking construction the root is a permutation-free
    // concatenation: root[r*i .. r*(i+1)] holds leaf i's live block. A
    // labeled leaf set therefore verifies the (even, odd) pairing.
    let r = 1;
    let d = 8;
    let t_len = 8;
    let mut rng = Rng::new(7);
    let mut teacher = Teacher::new(d, 8, &mut rng);
    for level in 0..3 {
        teacher.set_sweeper(level, stacking_sweeper(level, d, r << level)).unwrap();
    }
    let leaves: Vec<MemoryVector> = (0..t_len)
        .map(|i| {
            let mut v = vec![0.0f32; d];
            v[0] = (i + 1) as f32;
            MemoryVector::new(v)
        })
        .collect();
    let root = teacher.merge_up(&leaves).unwrap();
    let expect: Vec<f32> = (1..=t_len).map(|i| i as f32).collect();
    assert_eq!(root.as_slice(), &expect[..]);
}
