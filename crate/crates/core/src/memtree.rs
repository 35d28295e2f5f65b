//! Incremental memory tree and trajectory generation.
//!
//! A [`MemoryTree`] caches every internal merge result of the binary tree
//! over a leaf array. Replacing one leaf only dirties the nodes on its path
//! to the root, so an update costs log2(n) merges instead of a full rebuild.
//! Filling leaves one at a time from an all-zero start yields the student's
//! target trajectory y_0..y_n in (n-1) + n*log2(n) merges; the naive
//! full-rebuild path does the same in (n+1)(n-1) merges and serves as the
//! correctness oracle. Both paths evaluate identical merge calls on
//! identical operands, so their outputs agree bit-exactly.

use crate::error::{Error, Result};
use crate::sweeper::MemoryVector;
use crate::teacher::{tree_levels, Teacher};

/// What "zero" means for an unfilled leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroLeafMode {
    /// The all-zeros memory vector.
    #[default]
    ZeroLatent,
    /// The encoding of the all-zeros image.
    EncodedZeroImage,
}

/// The leaf value used for unseen positions under the given mode.
pub fn zero_leaf(teacher: &Teacher, mode: ZeroLeafMode) -> Result<MemoryVector> {
    match mode {
        ZeroLeafMode::ZeroLatent => Ok(MemoryVector::zeros(teacher.memory_dim())),
        ZeroLeafMode::EncodedZeroImage => teacher.codec().encode(&crate::codec::ImageVector::zeros()),
    }
}

/// Complete binary tree caching all internal merge results.
#[derive(Debug)]
pub struct MemoryTree<'a> {
    teacher: &'a Teacher,
    /// `levels[0]` are the leaves; `levels[depth]` holds the single root.
    levels: Vec<Vec<MemoryVector>>,
    merge_count: u64,
}

impl<'a> MemoryTree<'a> {
    /// Builds the full tree bottom-up: exactly `n - 1` merges.
    pub fn build(teacher: &'a Teacher, leaves: &[MemoryVector]) -> Result<Self> {
        let depth = tree_levels(leaves.len())?;
        for (i, leaf) in leaves.iter().enumerate() {
            if leaf.dim() != teacher.memory_dim() {
                return Err(Error::ShapeMismatch {
                    context: "tree leaf dim",
                    expected: teacher.memory_dim(),
                    actual: leaves[i].dim(),
                });
            }
        }
        let mut tree = Self { teacher, levels: vec![leaves.to_vec()], merge_count: 0 };
        for level in 0..depth {
            let current = &tree.levels[level];
            let mut next = Vec::with_capacity(current.len() / 2);
            for pair in current.chunks_exact(2) {
                next.push(teacher.sweeper(level).merge(&pair[0], &pair[1])?);
                tree.merge_count += 1;
            }
            tree.levels.push(next);
        }
        Ok(tree)
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn root(&self) -> &MemoryVector {
        &self.levels[self.depth()][0]
    }

    /// Total merges performed since construction.
    pub fn merge_count(&self) -> u64 {
        self.merge_count
    }

    pub fn node(&self, level: usize, index: usize) -> &MemoryVector {
        &self.levels[level][index]
    }

    /// Replaces one leaf and recomputes only its path to the root:
    /// exactly `depth` merges. Returns the new root.
    pub fn update_leaf(&mut self, index: usize, value: MemoryVector) -> Result<&MemoryVector> {
        let n = self.leaf_count();
        if index >= n {
            return Err(Error::IndexOutOfRange { index, len: n });
        }
        if value.dim() != self.teacher.memory_dim() {
            return Err(Error::ShapeMismatch {
                context: "updated leaf dim",
                expected: self.teacher.memory_dim(),
                actual: value.dim(),
            });
        }
        self.levels[0][index] = value;
        let mut pos = index;
        for level in 0..self.depth() {
            let parent = pos / 2;
            let merged = self.teacher.sweeper(level).merge(
                &self.levels[level][2 * parent],
                &self.levels[level][2 * parent + 1],
            )?;
            self.merge_count += 1;
            self.levels[level + 1][parent] = merged;
            pos = parent;
        }
        Ok(self.root())
    }

    /// Verifies that every cached internal node equals the merge of its
    /// children, bit-exactly.
    pub fn is_coherent(&self) -> Result<bool> {
        for level in 0..self.depth() {
            for (i, pair) in self.levels[level].chunks_exact(2).enumerate() {
                let expect = self.teacher.sweeper(level).merge(&pair[0], &pair[1])?;
                if expect.as_slice() != self.levels[level + 1][i].as_slice() {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// The zero-padded target trajectory y_0..y_n.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    targets: Vec<MemoryVector>,
}

impl Trajectory {
    /// y_0..y_n; `targets()[t]` is the root with leaves 1..t filled.
    pub fn targets(&self) -> &[MemoryVector] {
        &self.targets
    }

    pub fn horizon(&self) -> usize {
        self.targets.len() - 1
    }
}

/// Incremental trajectory: build the all-zero tree once, then fill leaves
/// left to right, recording the root after each update.
/// Total merges: `(n - 1) + n * log2(n)`.
pub fn generate_trajectory(
    teacher: &Teacher,
    latents: &[MemoryVector],
    mode: ZeroLeafMode,
) -> Result<Trajectory> {
    Ok(generate_trajectory_with_count(teacher, latents, mode)?.0)
}

pub fn generate_trajectory_with_count(
    teacher: &Teacher,
    latents: &[MemoryVector],
    mode: ZeroLeafMode,
) -> Result<(Trajectory, u64)> {
    let n = latents.len();
    tree_levels(n)?;
    let zero = zero_leaf(teacher, mode)?;
    let mut tree = MemoryTree::build(teacher, &vec![zero; n])?;
    let mut targets = Vec::with_capacity(n + 1);
    targets.push(tree.root().clone());
    for (t, latent) in latents.iter().enumerate() {
        let root = tree.update_leaf(t, latent.clone())?;
        targets.push(root.clone());
    }
    Ok((Trajectory { targets }, tree.merge_count()))
}

/// Oracle trajectory: rebuild the whole tree for every prefix.
/// Total merges: `(n + 1) * (n - 1)`.
pub fn naive_trajectory(
    teacher: &Teacher,
    latents: &[MemoryVector],
    mode: ZeroLeafMode,
) -> Result<Trajectory> {
    Ok(naive_trajectory_with_count(teacher, latents, mode)?.0)
}

pub fn naive_trajectory_with_count(
    teacher: &Teacher,
    latents: &[MemoryVector],
    mode: ZeroLeafMode,
) -> Result<(Trajectory, u64)> {
    let n = latents.len();
    tree_levels(n)?;
    let zero = zero_leaf(teacher, mode)?;
    let mut targets = Vec::with_capacity(n + 1);
    let mut merges = 0u64;
    for t in 0..=n {
        let mut leaves = vec![zero.clone(); n];
        leaves[..t].clone_from_slice(&latents[..t]);
        let tree = MemoryTree::build(teacher, &leaves)?;
        merges += tree.merge_count();
        targets.push(tree.root().clone());
    }
    Ok((Trajectory { targets }, merges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn latents(n: usize, d: usize, rng: &mut Rng) -> Vec<MemoryVector> {
        (0..n)
            .map(|_| MemoryVector::new((0..d).map(|_| rng.uniform_symmetric() as f32).collect()))
            .collect()
    }

    #[test]
    fn build_counts_and_matches_merge_up() {
        let mut rng = Rng::new(1);
        let t = Teacher::new(8, 8, &mut rng);
        let zs = latents(8, 8, &mut rng);
        let tree = MemoryTree::build(&t, &zs).unwrap();
        assert_eq!(tree.merge_count(), 7);
        assert_eq!(tree.root().as_slice(), t.merge_up(&zs).unwrap().as_slice());
    }

    #[test]
    fn build_single_leaf() {
        let mut rng = Rng::new(2);
        let t = Teacher::new(4, 8, &mut rng);
        let zs = latents(1, 4, &mut rng);
        let tree = MemoryTree::build(&t, &zs).unwrap();
        assert_eq!(tree.merge_count(), 0);
        assert_eq!(tree.root().as_slice(), zs[0].as_slice());
    }

    #[test]
    fn build_rejects_bad_leaf_counts() {
        let mut rng = Rng::new(3);
        let t = Teacher::new(4, 8, &mut rng);
        assert!(MemoryTree::build(&t, &latents(6, 4, &mut rng)).is_err());
        assert!(MemoryTree::build(&t, &[]).is_err());
    }

    #[test]
    fn update_to_same_value_keeps_root_and_costs_log_n() {
        let mut rng = Rng::new(4);
        let t = Teacher::new(8, 8, &mut rng);
        let zs = latents(8, 8, &mut rng);
        let mut tree = MemoryTree::build(&t, &zs).unwrap();
        let root_before = tree.root().clone();
        let before = tree.merge_count();
        tree.update_leaf(5, zs[5].clone()).unwrap();
        assert_eq!(tree.merge_count() - before, 3);
        assert_eq!(tree.root().as_slice(), root_before.as_slice());
    }

    #[test]
    fn update_matches_full_rebuild_bit_exactly() {
        let mut rng = Rng::new(5);
        let t = Teacher::new(8, 8, &mut rng);
        let mut zs = latents(16, 8, &mut rng);
        let mut tree = MemoryTree::build(&t, &zs).unwrap();
        for (slot, value) in [(3usize, latents(1, 8, &mut rng).pop().unwrap()), (12, latents(1, 8, &mut rng).pop().unwrap())] {
            zs[slot] = value.clone();
            tree.update_leaf(slot, value).unwrap();
            let rebuilt = MemoryTree::build(&t, &zs).unwrap();
            assert_eq!(tree.root().as_slice(), rebuilt.root().as_slice());
        }
        assert!(tree.is_coherent().unwrap());
    }

    #[test]
    fn update_rejects_out_of_range_index() {
        let mut rng = Rng::new(6);
        let t = Teacher::new(4, 8, &mut rng);
        let zs = latents(4, 4, &mut rng);
        let mut tree = MemoryTree::build(&t, &zs).unwrap();
        assert!(matches!(
            tree.update_leaf(4, zs[0].clone()),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn coherence_holds_after_update_sequences() {
        let mut rng = Rng::new(7);
        let t = Teacher::new(4, 8, &mut rng);
        let zs = latents(16, 4, &mut rng);
        let mut tree = MemoryTree::build(&t, &zs).unwrap();
        for _ in 0..20 {
            let idx = rng.below(16);
            let v = latents(1, 4, &mut rng).pop().unwrap();
            tree.update_leaf(idx, v).unwrap();
            assert!(tree.is_coherent().unwrap());
        }
    }

    #[test]
    fn trajectory_single_latent() {
        let mut rng = Rng::new(8);
        let t = Teacher::new(4, 8, &mut rng);
        let zs = latents(1, 4, &mut rng);
        let (traj, merges) = generate_trajectory_with_count(&t, &zs, ZeroLeafMode::ZeroLatent).unwrap();
        assert_eq!(traj.targets().len(), 2);
        assert_eq!(traj.horizon(), 1);
        assert_eq!(merges, 0);
        assert_eq!(traj.targets()[0].as_slice(), &[0.0; 4]);
        assert_eq!(traj.targets()[1].as_slice(), zs[0].as_slice());
    }

    #[test]
    fn trajectory_merge_count_formula() {
        let mut rng = Rng::new(9);
        let t = Teacher::new(4, 8, &mut rng);
        for n in [2usize, 4, 8, 16] {
            let zs = latents(n, 4, &mut rng);
            let (_, inc) = generate_trajectory_with_count(&t, &zs, ZeroLeafMode::ZeroLatent).unwrap();
            let (_, naive) = naive_trajectory_with_count(&t, &zs, ZeroLeafMode::ZeroLatent).unwrap();
            let log_n = n.trailing_zeros() as u64;
            assert_eq!(inc, (n as u64 - 1) + n as u64 * log_n, "incremental n={n}");
            assert_eq!(naive, (n as u64 + 1) * (n as u64 - 1), "naive n={n}");
        }
    }

    #[test]
    fn incremental_equals_naive_bit_exactly() {
        for seed in 0..3u64 {
            let mut rng = Rng::new(100 + seed);
            let t = Teacher::new(6, 8, &mut rng);
            for n in [1usize, 2, 4, 8, 16] {
                let zs = latents(n, 6, &mut rng);
                for mode in [ZeroLeafMode::ZeroLatent, ZeroLeafMode::EncodedZeroImage] {
                    let fast = generate_trajectory(&t, &zs, mode).unwrap();
                    let slow = naive_trajectory(&t, &zs, mode).unwrap();
                    assert_eq!(fast, slow, "seed {seed} n {n} mode {mode:?}");
                }
            }
        }
    }

    #[test]
    fn last_target_equals_merge_up() {
        let mut rng = Rng::new(10);
        let t = Teacher::new(6, 8, &mut rng);
        let zs = latents(8, 6, &mut rng);
        let traj = generate_trajectory(&t, &zs, ZeroLeafMode::ZeroLatent).unwrap();
        assert_eq!(
            traj.targets().last().unwrap().as_slice(),
            t.merge_up(&zs).unwrap().as_slice()
        );
    }

    #[test]
    fn first_target_ignores_latents() {
        let mut rng = Rng::new(11);
        let t = Teacher::new(6, 8, &mut rng);
        let a = generate_trajectory(&t, &latents(8, 6, &mut rng), ZeroLeafMode::ZeroLatent).unwrap();
        let b = generate_trajectory(&t, &latents(8, 6, &mut rng), ZeroLeafMode::ZeroLatent).unwrap();
        assert_eq!(a.targets()[0].as_slice(), b.targets()[0].as_slice());
    }

    #[test]
    fn encoded_zero_image_mode_changes_y0() {
        let mut rng = Rng::new(12);
        let mut t = Teacher::new(6, 8, &mut rng);
        // Freshly initialized encoders have zero biases, so E(0) = 0 and the
        // two modes coincide; a nonzero bias separates them like training does.
        for b in t.codec_mut().encoder_mut().layer_mut(0).bias_mut() {
            *b = 0.3;
        }
        let zs = latents(4, 6, &mut rng);
        let a = generate_trajectory(&t, &zs, ZeroLeafMode::ZeroLatent).unwrap();
        let b = generate_trajectory(&t, &zs, ZeroLeafMode::EncodedZeroImage).unwrap();
        assert_ne!(a.targets()[0].as_slice(), b.targets()[0].as_slice());
        // Final targets agree: all leaves are filled with the same latents.
        assert_eq!(a.targets().last().unwrap(), b.targets().last().unwrap());
    }
}
