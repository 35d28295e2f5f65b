//! Run configuration: named profiles, TOML overlays, validation.
//!
//! A run starts from a profile (`desk` or `paper`), overlays any fields
//! present in the TOML config file, then applies command-line overrides.
//! Unknown keys are rejected at parse time; semantic validation collects
//! every offending field into one message.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use imfn_core::memtree::ZeroLeafMode;
use imfn_core::student::DistillConfig;
use imfn_core::teacher::{TeacherTrainConfig, NUM_SWEEPERS};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale settings matching the reference experiment grid.
    Paper,
    /// Minutes-scale settings on synthetic data.
    Desk,
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(format!("unknown profile '{other}' (expected 'paper' or 'desk')")),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSpec {
    /// IDX image file; relative paths resolve under `IMFN_DATA_DIR` if set.
    Idx { path: PathBuf },
    /// Seed-fixed low-rank image manifold.
    Synthetic { count: usize, intrinsic_dim: usize, data_seed: u64 },
}

/// Fully resolved configuration for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub profile: Profile,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub memory_dims: Vec<usize>,
    pub horizon: usize,
    pub data: DataSpec,
    pub teacher: TeacherTrainConfig,
    pub student: DistillConfig,
    pub num_sequences: usize,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Reference-scale defaults: the full seed and memory-size grid, MNIST
    /// from IDX, lr 1e-4, batch 64, 50 epochs/level, lambda 1e-3, sigma
    /// 1e-2, 1000 zero-augment images; student 1000 epochs x 100
    /// trajectories with 25% timestep subsampling; 500 eval sequences.
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            seeds: vec![42, 123, 456, 789, 2024],
            split_seed: 2_024_001,
            split_ratio: 0.9,
            memory_dims: vec![128, 256, 512, 1024, 2048],
            horizon: 128,
            data: DataSpec::Idx { path: PathBuf::from("train-images-idx3-ubyte") },
            teacher: TeacherTrainConfig::paper(128),
            student: DistillConfig::paper(128),
            num_sequences: 500,
            out_dir: PathBuf::from("runs/paper"),
        }
    }

    /// Desk-scale defaults: one seed, d=32, 4 levels, 500 synthetic images.
    pub fn desk() -> Self {
        Self {
            profile: Profile::Desk,
            seeds: vec![42],
            split_seed: 7,
            split_ratio: 0.9,
            memory_dims: vec![32],
            horizon: 8,
            data: DataSpec::Synthetic { count: 500, intrinsic_dim: 4, data_seed: 777 },
            teacher: TeacherTrainConfig::desk(),
            student: DistillConfig::desk(),
            num_sequences: 64,
            out_dir: PathBuf::from("runs/desk"),
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Teacher hyperparameters for a given grid point.
    pub fn teacher_for(&self, memory_dim: usize) -> TeacherTrainConfig {
        TeacherTrainConfig { memory_dim, ..self.teacher.clone() }
    }

    /// Every problem found, one per field; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.seeds.is_empty() {
            problems.push("seeds: at least one seed is required".into());
        }
        if self.memory_dims.is_empty() {
            problems.push("memory_dims: at least one memory size is required".into());
        }
        if self.memory_dims.iter().any(|&d| d == 0) {
            problems.push("memory_dims: entries must be positive".into());
        }
        if !(0.0 < self.split_ratio && self.split_ratio < 1.0) {
            problems.push(format!("split_ratio: must be in (0, 1), got {}", self.split_ratio));
        }
        if !self.horizon.is_power_of_two() || self.horizon > 1 << NUM_SWEEPERS {
            problems.push(format!(
                "horizon: must be a power of two <= {}, got {}",
                1 << NUM_SWEEPERS,
                self.horizon
            ));
        }
        if self.num_sequences == 0 {
            problems.push("eval.num_sequences: must be positive".into());
        }
        match &self.data {
            DataSpec::Idx { path } => {
                if path.as_os_str().is_empty() {
                    problems.push("data.path: empty path".into());
                }
            }
            DataSpec::Synthetic { count, intrinsic_dim, .. } => {
                if *count == 0 {
                    problems.push("data.count: must be positive".into());
                }
                if *intrinsic_dim == 0 || *intrinsic_dim >= imfn_core::IMAGE_DIM {
                    problems.push(format!(
                        "data.intrinsic_dim: must be in 1..{}, got {intrinsic_dim}",
                        imfn_core::IMAGE_DIM
                    ));
                }
            }
        }
        {
            let mut teacher = self.teacher.clone();
            teacher.memory_dim = self.memory_dims.first().copied().unwrap_or(1);
            if let Err(e) = teacher.validate() {
                problems.push(format!("teacher: {e}"));
            }
        }
        let mut student = self.student.clone();
        student.horizon = self.horizon;
        if let Err(e) = student.validate() {
            problems.push(format!("student: {e}"));
        }
        problems
    }

    /// Flattened key/value echo embedded in checkpoints and reports.
    pub fn echo(&self, seed: u64, memory_dim: usize) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let profile = match self.profile {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        };
        m.insert("profile".into(), profile.into());
        m.insert("seed".into(), seed.to_string());
        m.insert("split_seed".into(), self.split_seed.to_string());
        m.insert("split_ratio".into(), self.split_ratio.to_string());
        m.insert("memory_dim".into(), memory_dim.to_string());
        m.insert("horizon".into(), self.horizon.to_string());
        match &self.data {
            DataSpec::Idx { path } => {
                m.insert("data.source".into(), "idx".into());
                m.insert("data.path".into(), path.display().to_string());
            }
            DataSpec::Synthetic { count, intrinsic_dim, data_seed } => {
                m.insert("data.source".into(), "synthetic".into());
                m.insert("data.count".into(), count.to_string());
                m.insert("data.intrinsic_dim".into(), intrinsic_dim.to_string());
                m.insert("data.data_seed".into(), data_seed.to_string());
            }
        }
        m.insert("teacher.codec_hidden".into(), self.teacher.codec_hidden.to_string());
        m.insert("teacher.learning_rate".into(), self.teacher.learning_rate.to_string());
        m.insert("teacher.batch_size".into(), self.teacher.batch_size.to_string());
        m.insert("teacher.epochs_per_level".into(), self.teacher.epochs_per_level.to_string());
        m.insert("teacher.lambda".into(), self.teacher.lambda.to_string());
        m.insert("teacher.sigma".into(), self.teacher.sigma.to_string());
        m.insert(
            "teacher.zero_augment_count".into(),
            self.teacher.zero_augment_count.to_string(),
        );
        m.insert(
            "teacher.num_levels_to_train".into(),
            self.teacher.num_levels_to_train.to_string(),
        );
        m.insert("student.epochs".into(), self.student.epochs.to_string());
        m.insert(
            "student.trajectories_per_epoch".into(),
            self.student.trajectories_per_epoch.to_string(),
        );
        m.insert("student.subset_fraction".into(), self.student.subset_fraction.to_string());
        m.insert("student.learning_rate".into(), self.student.learning_rate.to_string());
        m.insert(
            "student.zero_leaf_mode".into(),
            match self.student.zero_leaf_mode {
                ZeroLeafMode::ZeroLatent => "zero_latent".into(),
                ZeroLeafMode::EncodedZeroImage => "encoded_zero_image".into(),
            },
        );
        m.insert("eval.num_sequences".into(), self.num_sequences.to_string());
        m
    }
}

// ---- TOML overlay ---------------------------------------------------------

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    profile: Option<String>,
    seed: Option<u64>,
    seeds: Option<Vec<u64>>,
    split_seed: Option<u64>,
    split_ratio: Option<f64>,
    memory_dim: Option<usize>,
    memory_dims: Option<Vec<usize>>,
    horizon: Option<usize>,
    out_dir: Option<PathBuf>,
    data: Option<FileData>,
    teacher: Option<FileTeacher>,
    student: Option<FileStudent>,
    eval: Option<FileEval>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileData {
    source: Option<String>,
    path: Option<PathBuf>,
    count: Option<usize>,
    intrinsic_dim: Option<usize>,
    data_seed: Option<u64>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileTeacher {
    codec_hidden: Option<usize>,
    learning_rate: Option<f32>,
    batch_size: Option<usize>,
    epochs_per_level: Option<usize>,
    lambda: Option<f64>,
    sigma: Option<f64>,
    zero_augment_count: Option<usize>,
    num_levels_to_train: Option<usize>,
    promoted_bank_size: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileStudent {
    epochs: Option<usize>,
    trajectories_per_epoch: Option<usize>,
    subset_fraction: Option<f64>,
    learning_rate: Option<f32>,
    zero_leaf_mode: Option<String>,
}

#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEval {
    num_sequences: Option<usize>,
}

/// Command-line overrides applied after the file overlay.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

/// Builds the effective config: profile defaults, then the TOML file (if
/// any), then command-line overrides. Returns a validation error listing
/// every bad field.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let file: FileConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Validation(format!("cannot read config {}: {e}", p.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| CliError::Validation(format!("config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };

    let profile = match (&overrides.profile, &file.profile) {
        (Some(p), _) => *p,
        (None, Some(s)) => s.parse::<Profile>().map_err(CliError::Validation)?,
        (None, None) => Profile::Desk,
    };
    let mut cfg = RunConfig::for_profile(profile);

    if let Some(seeds) = file.seeds {
        cfg.seeds = seeds;
    } else if let Some(seed) = file.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(s) = file.split_seed {
        cfg.split_seed = s;
    }
    if let Some(r) = file.split_ratio {
        cfg.split_ratio = r;
    }
    if let Some(dims) = file.memory_dims {
        cfg.memory_dims = dims;
    } else if let Some(d) = file.memory_dim {
        cfg.memory_dims = vec![d];
    }
    if let Some(t) = file.horizon {
        cfg.horizon = t;
        cfg.student.horizon = t;
    }
    if let Some(dir) = file.out_dir {
        cfg.out_dir = dir;
    }

    if let Some(data) = file.data {
        let source = data.source.as_deref().unwrap_or(match cfg.data {
            DataSpec::Idx { .. } => "idx",
            DataSpec::Synthetic { .. } => "synthetic",
        });
        cfg.data = match source {
            "idx" => DataSpec::Idx {
                path: data.path.ok_or_else(|| {
                    CliError::Validation("data.path: required when data.source = \"idx\"".into())
                })?,
            },
            "synthetic" => {
                let (dc, di, ds) = match cfg.data {
                    DataSpec::Synthetic { count, intrinsic_dim, data_seed } => {
                        (count, intrinsic_dim, data_seed)
                    }
                    DataSpec::Idx { .. } => (500, 4, 777),
                };
                DataSpec::Synthetic {
                    count: data.count.unwrap_or(dc),
                    intrinsic_dim: data.intrinsic_dim.unwrap_or(di),
                    data_seed: data.data_seed.unwrap_or(ds),
                }
            }
            other => {
                return Err(CliError::Validation(format!(
                    "data.source: unknown source '{other}' (expected 'idx' or 'synthetic')"
                )))
            }
        };
    }

    if let Some(t) = file.teacher {
        if let Some(v) = t.codec_hidden {
            cfg.teacher.codec_hidden = v;
        }
        if let Some(v) = t.learning_rate {
            cfg.teacher.learning_rate = v;
        }
        if let Some(v) = t.batch_size {
            cfg.teacher.batch_size = v;
        }
        if let Some(v) = t.epochs_per_level {
            cfg.teacher.epochs_per_level = v;
        }
        if let Some(v) = t.lambda {
            cfg.teacher.lambda = v;
        }
        if let Some(v) = t.sigma {
            cfg.teacher.sigma = v;
        }
        if let Some(v) = t.zero_augment_count {
            cfg.teacher.zero_augment_count = v;
        }
        if let Some(v) = t.num_levels_to_train {
            cfg.teacher.num_levels_to_train = v;
        }
        if let Some(v) = t.promoted_bank_size {
            cfg.teacher.promoted_bank_size = Some(v);
        }
    }

    if let Some(s) = file.student {
        if let Some(v) = s.epochs {
            cfg.student.epochs = v;
        }
        if let Some(v) = s.trajectories_per_epoch {
            cfg.student.trajectories_per_epoch = v;
        }
        if let Some(v) = s.subset_fraction {
            cfg.student.subset_fraction = v;
        }
        if let Some(v) = s.learning_rate {
            cfg.student.learning_rate = v;
        }
        if let Some(v) = s.zero_leaf_mode {
            cfg.student.zero_leaf_mode = match v.as_str() {
                "zero_latent" => ZeroLeafMode::ZeroLatent,
                "encoded_zero_image" => ZeroLeafMode::EncodedZeroImage,
                other => {
                    return Err(CliError::Validation(format!(
                        "student.zero_leaf_mode: unknown mode '{other}'"
                    )))
                }
            };
        }
    }

    if let Some(e) = file.eval {
        if let Some(v) = e.num_sequences {
            cfg.num_sequences = v;
        }
    }

    if let Some(seed) = overrides.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &overrides.out_dir {
        cfg.out_dir = dir.clone();
    }

    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(CliError::Validation(format!(
            "invalid configuration:\n  - {}",
            problems.join("\n  - ")
        )));
    }
    Ok(cfg)
}
