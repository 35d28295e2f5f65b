//! Invertible memory flow networks.
//!
//! A binary-tree "sweeper" teacher compresses a sequence of images into one
//! memory vector by repeatedly merging adjacent pairs, each merge trained to
//! be locally invertible; a Merkle-style incremental tree turns the teacher
//! into per-step targets in O(n log n) merges; and a constant-cost recurrent
//! student is distilled to track that trajectory online.
//!
//! Module map:
//! - [`nn`]: dense layers, manual backprop, Adam, gradient oracle
//! - [`sweeper`]: the 2->1 merge / 1->2 invert primitive and its local loss
//! - [`codec`]: pixel <-> memory space bridge
//! - [`teacher`]: level-wise bank training and the tree roundtrip
//! - [`memtree`]: cached tree, O(log n) leaf updates, trajectory generation
//! - [`student`]: residual delta network and rollout distillation
//! - [`eval`]: MSE/PSNR/SSIM and the evaluation protocols
//! - [`data`]: IDX files, persisted splits, synthetic manifold
//! - [`checkpoint`]: binary model serialization

pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod memtree;
pub mod nn;
pub mod rng;
pub mod student;
pub mod sweeper;
pub mod teacher;

pub use codec::{Codec, ImageVector, IMAGE_DIM};
pub use error::{Error, Result};
pub use memtree::{MemoryTree, Trajectory, ZeroLeafMode};
pub use rng::Rng;
pub use student::{DistillConfig, Student};
pub use sweeper::{MemoryVector, Sweeper};
pub use teacher::{Bank, Teacher, TeacherTrainConfig, MAX_SEQUENCE_LEN, NUM_SWEEPERS};
