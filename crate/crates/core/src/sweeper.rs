//! One tree level's merge/invert pair and its local training step.
//!
//! A sweeper owns two networks: a merge net compressing two memory vectors
//! into one (2d -> d) and an invert net splitting one back into two
//! (d -> 2d). Training pushes `invert(merge(zL, zR))` toward `(zL, zR)`
//! with a norm penalty on the merged code and Gaussian noise injected into
//! it; evaluation paths never add noise.

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, gaussian_noise, l2_norm_sq, squared_error_sum, Activation, AdamState, Mlp, MlpGrads,
};
use crate::rng::Rng;

/// A point in the shared d-dimensional memory space.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryVector(Vec<f32>);

impl MemoryVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f32>> for MemoryVector {
    fn from(values: Vec<f32>) -> Self {
        Self(values)
    }
}

/// Paired merge (2 -> 1) and invert (1 -> 2) networks for one tree level.
#[derive(Debug, Clone)]
pub struct Sweeper {
    level: usize,
    merge_net: Mlp,
    invert_net: Mlp,
}

impl Sweeper {
    /// Default nets: merge `[2d -> 2d -> d]`, invert `[d -> 2d -> 2d]`,
    /// ReLU hidden, identity output.
    pub fn new(level: usize, memory_dim: usize, rng: &mut Rng) -> Self {
        let d = memory_dim;
        let merge_net = Mlp::new(
            &[2 * d, 2 * d, d],
            &[Activation::Relu, Activation::Identity],
            rng,
        )
        .expect("valid merge dims");
        let invert_net = Mlp::new(
            &[d, 2 * d, 2 * d],
            &[Activation::Relu, Activation::Identity],
            rng,
        )
        .expect("valid invert dims");
        Self { level, merge_net, invert_net }
    }

    /// Wraps caller-provided nets, validating the 2d->d / d->2d contract.
    pub fn from_nets(level: usize, merge_net: Mlp, invert_net: Mlp) -> Result<Self> {
        let d = merge_net.out_dim();
        if merge_net.in_dim() != 2 * d {
            return Err(Error::ShapeMismatch {
                context: "sweeper merge_net input",
                expected: 2 * d,
                actual: merge_net.in_dim(),
            });
        }
        if invert_net.in_dim() != d || invert_net.out_dim() != 2 * d {
            return Err(Error::ShapeMismatch {
                context: "sweeper invert_net dims",
                expected: d,
                actual: invert_net.in_dim(),
            });
        }
        Ok(Self { level, merge_net, invert_net })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn memory_dim(&self) -> usize {
        self.merge_net.out_dim()
    }

    pub fn merge_net(&self) -> &Mlp {
        &self.merge_net
    }

    pub fn invert_net(&self) -> &Mlp {
        &self.invert_net
    }

    pub fn merge_net_mut(&mut self) -> &mut Mlp {
        &mut self.merge_net
    }

    pub fn invert_net_mut(&mut self) -> &mut Mlp {
        &mut self.invert_net
    }

    /// Deterministic merged code; no noise on this path.
    pub fn merge(&self, left: &MemoryVector, right: &MemoryVector) -> Result<MemoryVector> {
        let d = self.memory_dim();
        if left.dim() != d {
            return Err(Error::ShapeMismatch { context: "merge left", expected: d, actual: left.dim() });
        }
        if right.dim() != d {
            return Err(Error::ShapeMismatch { context: "merge right", expected: d, actual: right.dim() });
        }
        let joined = concat(left.as_slice(), right.as_slice());
        Ok(MemoryVector::new(self.merge_net.infer(&joined)?))
    }

    /// Splits the 2d invert output: first half left, second half right.
    pub fn invert(&self, merged: &MemoryVector) -> Result<(MemoryVector, MemoryVector)> {
        let d = self.memory_dim();
        if merged.dim() != d {
            return Err(Error::ShapeMismatch { context: "invert input", expected: d, actual: merged.dim() });
        }
        let out = self.invert_net.infer(merged.as_slice())?;
        let (l, r) = out.split_at(d);
        Ok((MemoryVector::new(l.to_vec()), MemoryVector::new(r.to_vec())))
    }
}

pub fn concat(a: &[f32], b: &[f32]) -> Vec<f32> {
    let mut joined = Vec::with_capacity(a.len() + b.len());
    joined.extend_from_slice(a);
    joined.extend_from_slice(b);
    joined
}

/// `||ztL - zL||^2 + ||ztR - zR||^2`, summed over dimensions.
pub fn latent_recon_loss(
    z_left: &MemoryVector,
    z_right: &MemoryVector,
    recon_left: &MemoryVector,
    recon_right: &MemoryVector,
) -> f64 {
    squared_error_sum(recon_left.as_slice(), z_left.as_slice())
        + squared_error_sum(recon_right.as_slice(), z_right.as_slice())
}

/// `lambda * ||merged||^2`.
pub fn norm_penalty(merged: &MemoryVector, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    lambda * l2_norm_sq(merged.as_slice())
}

/// Optimizer state for one sweeper: each net has its own Adam moments.
#[derive(Debug, Clone)]
pub struct SweeperOptimizer {
    pub merge: AdamState,
    pub invert: AdamState,
}

impl SweeperOptimizer {
    pub fn new(sweeper: &Sweeper, learning_rate: f32) -> Self {
        Self {
            merge: AdamState::new(&sweeper.merge_net, learning_rate),
            invert: AdamState::new(&sweeper.invert_net, learning_rate),
        }
    }
}

/// Loss and per-net gradients for one latent-space pair.
pub(crate) struct PairBackprop {
    pub loss: f64,
    pub merge_grads: MlpGrads,
    pub invert_grads: MlpGrads,
}

/// Shared merge -> noise -> invert -> loss -> backward core. The recon
/// gradient is injected by the caller (latent loss here; the teacher wires
/// pixel-space losses through the decoder at level 0). The norm penalty is
/// applied to the clean merged code; noise only perturbs the inverter input.
pub(crate) fn pair_backprop(
    sweeper: &Sweeper,
    left: &MemoryVector,
    right: &MemoryVector,
    lambda: f64,
    noise: &[f32],
) -> Result<PairBackprop> {
    let d = sweeper.memory_dim();
    let joined = concat(left.as_slice(), right.as_slice());
    let merge_cache = sweeper.merge_net.forward(&joined)?;
    let merged_clean = merge_cache.output().to_vec();
    let noisy: Vec<f32> = merged_clean.iter().zip(noise).map(|(&m, &n)| m + n).collect();
    let invert_cache = sweeper.invert_net.forward(&noisy)?;
    let recon = invert_cache.output();
    let (recon_left, recon_right) = recon.split_at(d);

    let loss = squared_error_sum(recon_left, left.as_slice())
        + squared_error_sum(recon_right, right.as_slice())
        + lambda * l2_norm_sq(&merged_clean);

    let grad_recon: Vec<f32> = recon
        .iter()
        .zip(left.as_slice().iter().chain(right.as_slice()))
        .map(|(&r, &z)| 2.0 * (r - z))
        .collect();
    let (invert_grads, grad_noisy) = sweeper.invert_net.backward(&invert_cache, &grad_recon)?;
    let grad_merged: Vec<f32> = grad_noisy
        .iter()
        .zip(&merged_clean)
        .map(|(&g, &m)| g + 2.0 * lambda as f32 * m)
        .collect();
    let (merge_grads, _) = sweeper.merge_net.backward(&merge_cache, &grad_merged)?;

    Ok(PairBackprop { loss, merge_grads, invert_grads })
}

/// One latent-space training cycle on a single pair: merge, inject noise,
/// invert, loss, backward, Adam on both nets. Returns the pre-step loss.
/// Draws exactly one `gaussian_noise(d, sigma)` from `rng`.
///
/// Level-0 pairs route through pixel space and are trained by the teacher,
/// so this rejects level-0 sweepers.
pub fn train_pair_step(
    sweeper: &mut Sweeper,
    left: &MemoryVector,
    right: &MemoryVector,
    lambda: f64,
    sigma: f64,
    opt: &mut SweeperOptimizer,
    rng: &mut Rng,
) -> Result<f64> {
    if sweeper.level == 0 {
        return Err(Error::Config(
            "level-0 sweepers train through pixel space; use the teacher trainer".into(),
        ));
    }
    let noise = gaussian_noise(sweeper.memory_dim(), sigma, rng);
    let bp = pair_backprop(sweeper, left, right, lambda, &noise)?;
    if !bp.loss.is_finite() {
        return Err(Error::NonFinite { what: format!("sweeper level {} pair loss", sweeper.level) });
    }
    adam_step(&mut sweeper.merge_net, &bp.merge_grads, &mut opt.merge)?;
    adam_step(&mut sweeper.invert_net, &bp.invert_grads, &mut opt.invert)?;
    Ok(bp.loss)
}
