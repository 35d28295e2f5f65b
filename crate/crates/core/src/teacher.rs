//! The tree-structured compression teacher.
//!
//! A teacher is the codec plus an ordered stack of sweepers, one per tree
//! level. Training is factorized by depth: each level trains on random pairs
//! drawn from a bank of representations at that level, then the next bank is
//! synthesized by merging random pairs (no inversion). At level 0 the
//! reconstruction loss routes through pixel space and also trains the codec;
//! higher levels train purely in latent space with the frozen codec.
//!
//! Evaluation composes the frozen pieces: encode leaves, merge adjacent
//! pairs upward (left = even index) to a single root, invert back down, and
//! decode.

use crate::codec::{Codec, ImageVector};
use crate::error::{Error, Result};
use crate::nn::{adam_step, gaussian_noise, l2_norm_sq, AdamState, MlpGrads};
use crate::rng::Rng;
use crate::sweeper::{concat, pair_backprop, MemoryVector, Sweeper, SweeperOptimizer};

/// Fixed sweeper stack depth; supports sequences up to 2^9 leaves.
pub const NUM_SWEEPERS: usize = 9;

/// Largest supported sequence length.
pub const MAX_SEQUENCE_LEN: usize = 1 << NUM_SWEEPERS;

/// Codec plus ordered sweeper stack sharing one memory dimension.
#[derive(Debug, Clone)]
pub struct Teacher {
    codec: Codec,
    sweepers: Vec<Sweeper>,
    memory_dim: usize,
}

impl Teacher {
    pub fn new(memory_dim: usize, codec_hidden: usize, rng: &mut Rng) -> Self {
        let codec = Codec::new(memory_dim, codec_hidden, &mut rng.derive("codec"));
        let sweepers = (0..NUM_SWEEPERS)
            .map(|level| Sweeper::new(level, memory_dim, &mut rng.derive(&format!("sweeper{level}"))))
            .collect();
        Self { codec, sweepers, memory_dim }
    }

    pub fn memory_dim(&self) -> usize {
        self.memory_dim
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn codec_mut(&mut self) -> &mut Codec {
        &mut self.codec
    }

    pub fn sweepers(&self) -> &[Sweeper] {
        &self.sweepers
    }

    pub fn sweeper(&self, level: usize) -> &Sweeper {
        &self.sweepers[level]
    }

    pub fn sweeper_mut(&mut self, level: usize) -> &mut Sweeper {
        &mut self.sweepers[level]
    }

    /// Replaces one sweeper; used by tests that need hand-built nets.
    pub fn set_sweeper(&mut self, level: usize, sweeper: Sweeper) -> Result<()> {
        if sweeper.memory_dim() != self.memory_dim {
            return Err(Error::ShapeMismatch {
                context: "replacement sweeper dim",
                expected: self.memory_dim,
                actual: sweeper.memory_dim(),
            });
        }
        self.sweepers[level] = sweeper;
        Ok(())
    }

    /// FNV-1a over every parameter bit of the codec and all sweepers.
    pub fn params_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let parts = [
            self.codec.encoder().params_hash(),
            self.codec.decoder().params_hash(),
        ];
        let sweeper_parts: Vec<u64> = self
            .sweepers
            .iter()
            .flat_map(|s| [s.merge_net().params_hash(), s.invert_net().params_hash()])
            .collect();
        for part in parts.iter().chain(&sweeper_parts) {
            for b in part.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }

    /// Hash of the parameters strictly below `level`, for freeze checks.
    pub fn params_hash_below(&self, level: usize) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut parts = vec![
            self.codec.encoder().params_hash(),
            self.codec.decoder().params_hash(),
        ];
        for s in &self.sweepers[..level] {
            parts.push(s.merge_net().params_hash());
            parts.push(s.invert_net().params_hash());
        }
        for part in parts {
            for b in part.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }

    /// Elementwise encoding, order preserved.
    pub fn encode_sequence(&self, frames: &[ImageVector]) -> Result<Vec<MemoryVector>> {
        frames.iter().map(|f| self.codec.encode(f)).collect()
    }

    /// Merges adjacent non-overlapping pairs (left = even index) level by
    /// level to a single root. Exactly `leaves.len() - 1` merges.
    pub fn merge_up(&self, leaves: &[MemoryVector]) -> Result<MemoryVector> {
        Ok(self.merge_up_with_count(leaves)?.0)
    }

    pub fn merge_up_with_count(&self, leaves: &[MemoryVector]) -> Result<(MemoryVector, u64)> {
        let levels = tree_levels(leaves.len())?;
        let mut count = 0u64;
        let mut current: Vec<MemoryVector> = leaves.to_vec();
        for (level, sweeper) in self.sweepers.iter().enumerate().take(levels) {
            let _ = level;
            let mut next = Vec::with_capacity(current.len() / 2);
            for pair in current.chunks_exact(2) {
                next.push(sweeper.merge(&pair[0], &pair[1])?);
                count += 1;
            }
            current = next;
        }
        Ok((current.into_iter().next().expect("root"), count))
    }

    /// Mirror of [`Teacher::merge_up`]: splits the root back into `t` leaves
    /// in original order. Exactly `t - 1` inversions.
    pub fn invert_down(&self, root: &MemoryVector, t: usize) -> Result<Vec<MemoryVector>> {
        Ok(self.invert_down_with_count(root, t)?.0)
    }

    pub fn invert_down_with_count(&self, root: &MemoryVector, t: usize) -> Result<(Vec<MemoryVector>, u64)> {
        let levels = tree_levels(t)?;
        let mut count = 0u64;
        let mut current = vec![root.clone()];
        for level in (0..levels).rev() {
            let sweeper = &self.sweepers[level];
            let mut next = Vec::with_capacity(current.len() * 2);
            for node in &current {
                let (left, right) = sweeper.invert(node)?;
                next.push(left);
                next.push(right);
                count += 1;
            }
            current = next;
        }
        Ok((current, count))
    }

    /// encode -> merge up -> invert down -> decode.
    pub fn roundtrip(&self, frames: &[ImageVector]) -> Result<Vec<ImageVector>> {
        let leaves = self.encode_sequence(frames)?;
        let root = self.merge_up(&leaves)?;
        let recon = self.invert_down(&root, frames.len())?;
        recon.iter().map(|z| self.codec.decode(z)).collect()
    }
}

/// `log2(t)` for power-of-two sequence lengths within the supported depth.
pub fn tree_levels(t: usize) -> Result<usize> {
    if t == 0 || !t.is_power_of_two() || t > MAX_SEQUENCE_LEN {
        return Err(Error::InvalidLength { n: t, max: MAX_SEQUENCE_LEN });
    }
    Ok(t.trailing_zeros() as usize)
}

/// Pool of representations used to train one level.
#[derive(Debug, Clone)]
pub enum BankItems {
    Images(Vec<ImageVector>),
    Latents(Vec<MemoryVector>),
}

#[derive(Debug, Clone)]
pub struct Bank {
    level: usize,
    items: BankItems,
}

impl Bank {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn len(&self) -> usize {
        match &self.items {
            BankItems::Images(v) => v.len(),
            BankItems::Latents(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn items(&self) -> &BankItems {
        &self.items
    }

    pub fn latents(&self) -> Option<&[MemoryVector]> {
        match &self.items {
            BankItems::Latents(v) => Some(v),
            BankItems::Images(_) => None,
        }
    }

    pub fn images(&self) -> Option<&[ImageVector]> {
        match &self.items {
            BankItems::Images(v) => Some(v),
            BankItems::Latents(_) => None,
        }
    }
}

/// Per-run teacher training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TeacherTrainConfig {
    pub memory_dim: usize,
    pub codec_hidden: usize,
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs_per_level: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub zero_augment_count: usize,
    pub num_levels_to_train: usize,
    /// Size of banks above level 0; defaults to the level-0 bank size.
    pub promoted_bank_size: Option<usize>,
}

impl TeacherTrainConfig {
    /// Full-scale defaults: lr 1e-4, minibatch 64, 50 epochs per level,
    /// lambda 1e-3, sigma 1e-2, 1000 zero-augment images, all 9 levels.
    pub fn paper(memory_dim: usize) -> Self {
        Self {
            memory_dim,
            codec_hidden: 1024,
            learning_rate: 1e-4,
            batch_size: 64,
            epochs_per_level: 50,
            lambda: 1e-3,
            sigma: 1e-2,
            zero_augment_count: 1000,
            num_levels_to_train: NUM_SWEEPERS,
            promoted_bank_size: None,
        }
    }

    /// Minutes-scale profile: d=32, narrow codec, 4 levels (sequences to 16).
    pub fn desk() -> Self {
        Self {
            memory_dim: 32,
            codec_hidden: 128,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs_per_level: 50,
            lambda: 1e-3,
            sigma: 1e-2,
            zero_augment_count: 50,
            num_levels_to_train: 4,
            promoted_bank_size: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.memory_dim == 0 {
            problems.push("memory_dim must be positive".to_string());
        }
        if self.codec_hidden == 0 {
            problems.push("codec_hidden must be positive".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.num_levels_to_train == 0 || self.num_levels_to_train > NUM_SWEEPERS {
            problems.push(format!(
                "num_levels_to_train must be in 1..={NUM_SWEEPERS}, got {}",
                self.num_levels_to_train
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.lambda < 0.0 {
            problems.push(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if self.sigma < 0.0 {
            problems.push(format!("sigma must be nonnegative, got {}", self.sigma));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// One epoch of one level's training log.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub level: usize,
    pub epoch: usize,
    pub mean_loss: f64,
    /// Optimizer steps taken this epoch: ceil(bank size / batch size).
    pub steps: usize,
}

/// Level-0 bank: the dataset images plus `zero_augment_count` all-zero
/// images, shuffled.
pub fn build_bank0(dataset: &[ImageVector], cfg: &TeacherTrainConfig, rng: &mut Rng) -> Bank {
    let mut items: Vec<ImageVector> = dataset.to_vec();
    items.extend((0..cfg.zero_augment_count).map(|_| ImageVector::zeros()));
    rng.shuffle(&mut items);
    Bank { level: 0, items: BankItems::Images(items) }
}

/// Trains the sweeper at `level` (plus the codec when `level == 0`) on
/// random bank pairs: the right element walks the shuffled bank in
/// minibatches, the left partner is drawn uniformly from the whole bank.
pub fn train_level(
    teacher: &mut Teacher,
    level: usize,
    bank: &Bank,
    cfg: &TeacherTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if bank.level() != level {
        return Err(Error::Config(format!(
            "bank at level {} cannot train sweeper level {level}",
            bank.level()
        )));
    }
    if bank.is_empty() {
        return Err(Error::Config("cannot train on an empty bank".into()));
    }
    if level >= NUM_SWEEPERS {
        return Err(Error::Config(format!("level {level} out of range (< {NUM_SWEEPERS})")));
    }

    let mut records = Vec::with_capacity(cfg.epochs_per_level);
    let mut sweeper_opt = SweeperOptimizer::new(teacher.sweeper(level), cfg.learning_rate);
    let mut codec_opt = (level == 0).then(|| {
        (
            AdamState::new(teacher.codec().encoder(), cfg.learning_rate),
            AdamState::new(teacher.codec().decoder(), cfg.learning_rate),
        )
    });

    let n = bank.len();
    for epoch in 0..cfg.epochs_per_level {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            steps += 1;
            let batch_loss = match bank.items() {
                BankItems::Images(images) => train_batch_pixel(
                    teacher,
                    images,
                    batch,
                    cfg,
                    &mut sweeper_opt,
                    codec_opt.as_mut().expect("level 0 trains the codec"),
                    rng,
                )?,
                BankItems::Latents(latents) => {
                    train_batch_latent(teacher, level, latents, batch, cfg, &mut sweeper_opt, rng)?
                }
            };
            loss_sum += batch_loss;
        }
        let mean_loss = loss_sum / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::NonFinite { what: format!("level {level} epoch {epoch} mean loss") });
        }
        records.push(EpochRecord { level, epoch, mean_loss, steps });
    }
    let trained_finite = teacher.sweeper(level).merge_net().all_params_finite()
        && teacher.sweeper(level).invert_net().all_params_finite()
        && (level != 0
            || (teacher.codec().encoder().all_params_finite()
                && teacher.codec().decoder().all_params_finite()));
    if !trained_finite {
        return Err(Error::NonFinite { what: format!("level {level} parameters after training") });
    }
    Ok(records)
}

/// One minibatch in latent space (level > 0). Returns the summed loss.
fn train_batch_latent(
    teacher: &mut Teacher,
    level: usize,
    latents: &[MemoryVector],
    batch: &[usize],
    cfg: &TeacherTrainConfig,
    opt: &mut SweeperOptimizer,
    rng: &mut Rng,
) -> Result<f64> {
    let sweeper = teacher.sweeper(level);
    let mut merge_acc = MlpGrads::zeros_like(sweeper.merge_net());
    let mut invert_acc = MlpGrads::zeros_like(sweeper.invert_net());
    let mut loss_sum = 0.0f64;
    for &right_idx in batch {
        let left_idx = rng.below(latents.len());
        let noise = gaussian_noise(teacher.memory_dim(), cfg.sigma, rng);
        let bp = pair_backprop(sweeper, &latents[left_idx], &latents[right_idx], cfg.lambda, &noise)?;
        if !bp.loss.is_finite() {
            return Err(Error::NonFinite { what: format!("level {level} pair loss") });
        }
        loss_sum += bp.loss;
        merge_acc.add_assign(&bp.merge_grads);
        invert_acc.add_assign(&bp.invert_grads);
    }
    let inv_batch = 1.0 / batch.len() as f32;
    merge_acc.scale(inv_batch);
    invert_acc.scale(inv_batch);
    let sweeper = teacher.sweeper_mut(level);
    adam_step(sweeper.merge_net_mut(), &merge_acc, &mut opt.merge)?;
    adam_step(sweeper.invert_net_mut(), &invert_acc, &mut opt.invert)?;
    Ok(loss_sum)
}

/// One minibatch through pixel space (level 0): image -> E -> merge -> noise
/// -> invert -> D -> pixel loss. Trains codec and sweeper 0.
fn train_batch_pixel(
    teacher: &mut Teacher,
    images: &[ImageVector],
    batch: &[usize],
    cfg: &TeacherTrainConfig,
    sweeper_opt: &mut SweeperOptimizer,
    codec_opt: &mut (AdamState, AdamState),
    rng: &mut Rng,
) -> Result<f64> {
    let d = teacher.memory_dim();
    let sweeper = teacher.sweeper(0);
    let encoder = teacher.codec().encoder();
    let decoder = teacher.codec().decoder();

    let mut enc_acc = MlpGrads::zeros_like(encoder);
    let mut dec_acc = MlpGrads::zeros_like(decoder);
    let mut merge_acc = MlpGrads::zeros_like(sweeper.merge_net());
    let mut invert_acc = MlpGrads::zeros_like(sweeper.invert_net());
    let mut loss_sum = 0.0f64;

    for &right_idx in batch {
        let left_idx = rng.below(images.len());
        let x_left = &images[left_idx];
        let x_right = &images[right_idx];

        let enc_left = encoder.forward(x_left.as_slice())?;
        let enc_right = encoder.forward(x_right.as_slice())?;
        let joined = concat(enc_left.output(), enc_right.output());
        let merge_cache = sweeper.merge_net().forward(&joined)?;
        let merged = merge_cache.output().to_vec();
        let noise = gaussian_noise(d, cfg.sigma, rng);
        let noisy: Vec<f32> = merged.iter().zip(&noise).map(|(&m, &n)| m + n).collect();
        let invert_cache = sweeper.invert_net().forward(&noisy)?;
        let (recon_l, recon_r) = invert_cache.output().split_at(d);
        let dec_left = decoder.forward(recon_l)?;
        let dec_right = decoder.forward(recon_r)?;

        let loss = crate::nn::squared_error_sum(dec_left.output(), x_left.as_slice())
            + crate::nn::squared_error_sum(dec_right.output(), x_right.as_slice())
            + cfg.lambda * l2_norm_sq(&merged);
        if !loss.is_finite() {
            return Err(Error::NonFinite { what: "level 0 pair loss".into() });
        }
        loss_sum += loss;

        let grad_pix_l: Vec<f32> = dec_left
            .output()
            .iter()
            .zip(x_left.as_slice())
            .map(|(&p, &x)| 2.0 * (p - x))
            .collect();
        let grad_pix_r: Vec<f32> = dec_right
            .output()
            .iter()
            .zip(x_right.as_slice())
            .map(|(&p, &x)| 2.0 * (p - x))
            .collect();
        let (dec_grads_l, grad_recon_l) = decoder.backward(&dec_left, &grad_pix_l)?;
        let (dec_grads_r, grad_recon_r) = decoder.backward(&dec_right, &grad_pix_r)?;
        dec_acc.add_assign(&dec_grads_l);
        dec_acc.add_assign(&dec_grads_r);

        let grad_recon = concat(&grad_recon_l, &grad_recon_r);
        let (invert_grads, grad_noisy) = sweeper.invert_net().backward(&invert_cache, &grad_recon)?;
        invert_acc.add_assign(&invert_grads);

        let grad_merged: Vec<f32> = grad_noisy
            .iter()
            .zip(&merged)
            .map(|(&g, &m)| g + 2.0 * cfg.lambda as f32 * m)
            .collect();
        let (merge_grads, grad_joined) = sweeper.merge_net().backward(&merge_cache, &grad_merged)?;
        merge_acc.add_assign(&merge_grads);

        let (grad_z_left, grad_z_right) = grad_joined.split_at(d);
        let (enc_grads_l, _) = encoder.backward(&enc_left, grad_z_left)?;
        let (enc_grads_r, _) = encoder.backward(&enc_right, grad_z_right)?;
        enc_acc.add_assign(&enc_grads_l);
        enc_acc.add_assign(&enc_grads_r);
    }

    let inv_batch = 1.0 / batch.len() as f32;
    enc_acc.scale(inv_batch);
    dec_acc.scale(inv_batch);
    merge_acc.scale(inv_batch);
    invert_acc.scale(inv_batch);

    adam_step(teacher.codec_mut().encoder_mut(), &enc_acc, &mut codec_opt.0)?;
    adam_step(teacher.codec_mut().decoder_mut(), &dec_acc, &mut codec_opt.1)?;
    let sweeper = teacher.sweeper_mut(0);
    adam_step(sweeper.merge_net_mut(), &merge_acc, &mut sweeper_opt.merge)?;
    adam_step(sweeper.invert_net_mut(), &invert_acc, &mut sweeper_opt.invert)?;
    Ok(loss_sum)
}

/// Synthesizes the bank for `level + 1` by merging `target_size` random
/// pairs from `bank` (no inversion). Level-0 items are encoded first.
pub fn promote_bank(
    teacher: &Teacher,
    level: usize,
    bank: &Bank,
    target_size: usize,
    rng: &mut Rng,
) -> Result<Bank> {
    Ok(promote_bank_traced(teacher, level, bank, target_size, rng)?.0)
}

/// As [`promote_bank`], also returning the sampled (left, right) index pairs.
pub fn promote_bank_traced(
    teacher: &Teacher,
    level: usize,
    bank: &Bank,
    target_size: usize,
    rng: &mut Rng,
) -> Result<(Bank, Vec<(usize, usize)>)> {
    if bank.level() != level {
        return Err(Error::Config(format!(
            "bank at level {} cannot promote as level {level}",
            bank.level()
        )));
    }
    if bank.is_empty() {
        return Err(Error::Config("cannot promote an empty bank".into()));
    }
    let sweeper = teacher.sweeper(level);
    let mut latents = Vec::with_capacity(target_size);
    let mut pairs = Vec::with_capacity(target_size);
    for _ in 0..target_size {
        let a = rng.below(bank.len());
        let b = rng.below(bank.len());
        let merged = match bank.items() {
            BankItems::Images(images) => {
                let za = teacher.codec().encode(&images[a])?;
                let zb = teacher.codec().encode(&images[b])?;
                sweeper.merge(&za, &zb)?
            }
            BankItems::Latents(zs) => sweeper.merge(&zs[a], &zs[b])?,
        };
        latents.push(merged);
        pairs.push((a, b));
    }
    Ok((Bank { level: level + 1, items: BankItems::Latents(latents) }, pairs))
}

/// Level-sequential training: bank 0 from the dataset, then for each level
/// train, then promote. Returns the frozen teacher and per-epoch log.
pub fn train_teacher(
    dataset: &[ImageVector],
    cfg: &TeacherTrainConfig,
    rng: &mut Rng,
) -> Result<(Teacher, Vec<EpochRecord>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("teacher training needs a nonempty dataset".into()));
    }
    let mut teacher = Teacher::new(cfg.memory_dim, cfg.codec_hidden, &mut rng.derive("init"));
    let mut bank = build_bank0(dataset, cfg, &mut rng.derive("bank0"));
    let bank0_size = bank.len();
    let promoted_size = cfg.promoted_bank_size.unwrap_or(bank0_size);

    let mut log = Vec::new();
    for level in 0..cfg.num_levels_to_train {
        let mut level_rng = rng.derive(&format!("train-level{level}"));
        log.extend(train_level(&mut teacher, level, &bank, cfg, &mut level_rng)?);
        if level + 1 < cfg.num_levels_to_train {
            let mut promote_rng = rng.derive(&format!("promote-level{level}"));
            bank = promote_bank(&teacher, level, &bank, promoted_size, &mut promote_rng)?;
        }
    }
    Ok((teacher, log))
}
