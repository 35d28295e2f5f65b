//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::Context;
use imfn_core::checkpoint::{self, write_atomic};
use imfn_core::data::{
    load_idx_images, make_split, save_idx_images, save_split, synthetic_manifold, ImageDataset,
    SplitIndices,
};
use imfn_core::eval::{
    eval_end_of_sequence, eval_student_prefix, eval_teacher_roundtrip, summarize_reports,
};
use imfn_core::memtree::{generate_trajectory_with_count, naive_trajectory_with_count};
use imfn_core::sweeper::MemoryVector;
use imfn_core::teacher::train_teacher as train_teacher_core;
use imfn_core::Rng;

use crate::config::{DataSpec, RunConfig};
use crate::CliError;

/// Report timestamps come from `IMFN_TIMESTAMP` when set (reproducible
/// reruns), otherwise seconds since the Unix epoch.
fn timestamp() -> String {
    std::env::var("IMFN_TIMESTAMP").unwrap_or_else(|_| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs().to_string())
            .unwrap_or_else(|_| "0".into())
    })
}

/// Resolves a dataset path under `IMFN_DATA_DIR` when it is relative.
fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("IMFN_DATA_DIR") {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.to_path_buf(),
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<ImageDataset, CliError> {
    match &cfg.data {
        DataSpec::Idx { path } => {
            let full = resolve_data_path(path);
            let bytes = std::fs::read(&full)
                .with_context(|| format!("reading dataset {}", full.display()))
                .map_err(|e| CliError::Validation(format!("{e:#}")))?;
            Ok(load_idx_images(&bytes)?)
        }
        DataSpec::Synthetic { count, intrinsic_dim, data_seed } => {
            Ok(synthetic_manifold(*count, *intrinsic_dim, *data_seed))
        }
    }
}

fn split_for(cfg: &RunConfig, dataset: &ImageDataset) -> Result<SplitIndices, CliError> {
    Ok(make_split(dataset.len(), cfg.split_ratio, cfg.split_seed)?)
}

/// JSON-lines log: a header line echoing the config, then one record per
/// epoch.
fn write_log<T: serde::Serialize>(
    path: &Path,
    echo: &std::collections::BTreeMap<String, String>,
    records: &[T],
) -> Result<(), CliError> {
    let mut out = String::new();
    let header = serde_json::json!({ "config_echo": echo });
    out.push_str(&serde_json::to_string(&header).map_err(imfn_core::Error::from)?);
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(imfn_core::Error::from)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(imfn_core::Error::from)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn train_teacher(cfg: &RunConfig) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let split = split_for(cfg, &dataset)?;
    save_split(&cfg.out_dir.join("split.json"), &split)?;
    let train_pool = dataset.select(&split.train)?;

    for &memory_dim in &cfg.memory_dims {
        for &seed in &cfg.seeds {
            let teacher_cfg = cfg.teacher_for(memory_dim);
            let mut rng = Rng::new(seed);
            let started = std::time::Instant::now();
            let (teacher, log) = train_teacher_core(&train_pool, &teacher_cfg, &mut rng)?;
            let elapsed = started.elapsed().as_secs_f64();

            let stem = format!("teacher_d{memory_dim}_seed{seed}");
            let ckpt = cfg.out_dir.join(format!("{stem}.ckpt"));
            let echo = cfg.echo(seed, memory_dim);
            checkpoint::save_teacher(&ckpt, &teacher, seed, echo.clone())?;
            write_log(&cfg.out_dir.join(format!("{stem}_log.jsonl")), &echo, &log)?;
            let final_loss = log.last().map(|r| r.mean_loss).unwrap_or(f64::NAN);
            println!(
                "trained d={memory_dim} seed={seed} in {elapsed:.1}s (final level loss {final_loss:.5}) -> {}",
                ckpt.display()
            );
        }
    }
    Ok(())
}

pub fn train_student(cfg: &RunConfig, teacher_path: &Path) -> Result<(), CliError> {
    let (teacher, teacher_header) = checkpoint::load_teacher(teacher_path)?;
    let memory_dim = teacher.memory_dim();
    if !cfg.memory_dims.contains(&memory_dim) {
        return Err(CliError::Validation(format!(
            "teacher checkpoint has memory_dim {memory_dim}, config expects one of {:?}",
            cfg.memory_dims
        )));
    }
    let dataset = load_dataset(cfg)?;
    let split = split_for(cfg, &dataset)?;
    save_split(&cfg.out_dir.join("split.json"), &split)?;
    let train_pool = dataset.select(&split.train)?;

    let seed = cfg.seeds[0];
    let mut student_cfg = cfg.student.clone();
    student_cfg.horizon = cfg.horizon;
    let mut rng = Rng::new(seed);
    let started = std::time::Instant::now();
    let (student, log, teacher_hash) =
        imfn_core::student::train_student(&teacher, &train_pool, &student_cfg, &mut rng)?;
    let elapsed = started.elapsed().as_secs_f64();

    // The recorded teacher hash proves the targets came from this frozen
    // checkpoint.
    let mut echo = cfg.echo(seed, memory_dim);
    echo.insert("teacher_checksum".into(), format!("{teacher_hash:016x}"));
    echo.insert("teacher_checkpoint".into(), teacher_path.display().to_string());
    echo.insert("teacher_seed".into(), teacher_header.seed.to_string());

    let stem = format!("student_d{memory_dim}_T{}_seed{seed}", cfg.horizon);
    let ckpt = cfg.out_dir.join(format!("{stem}.ckpt"));
    checkpoint::save_student(&ckpt, &student, seed, echo.clone())?;
    write_log(&cfg.out_dir.join(format!("{stem}_log.jsonl")), &echo, &log)?;
    println!(
        "distilled d={memory_dim} T={} seed={seed} in {elapsed:.1}s (loss {:.4} -> {:.4}) -> {}",
        cfg.horizon,
        log.first().map(|r| r.mean_loss).unwrap_or(f64::NAN),
        log.last().map(|r| r.mean_loss).unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct PrefixReport {
    memory_dim: usize,
    horizon: usize,
    seed: u64,
    num_sequences: usize,
    prefix_mse: Vec<f64>,
    timestamp: String,
}

#[derive(serde::Serialize)]
struct EndOfSequenceReport {
    memory_dim: usize,
    horizon: usize,
    seed: u64,
    num_sequences: usize,
    teacher_mse: f64,
    student_mse: f64,
    timestamp: String,
}

pub fn eval(
    cfg: &RunConfig,
    teacher_paths: &[PathBuf],
    student_path: Option<&Path>,
    protocol: &str,
) -> Result<(), CliError> {
    let dataset = load_dataset(cfg)?;
    let split = split_for(cfg, &dataset)?;
    let test_pool = dataset.select(&split.test)?;
    let seed = cfg.seeds[0];
    let t_len = cfg.horizon;

    match protocol {
        "teacher-roundtrip" => {
            let mut reports = Vec::new();
            for path in teacher_paths {
                let (teacher, header) = checkpoint::load_teacher(path)?;
                let mut rng = Rng::new(seed).derive("eval-roundtrip");
                let mut report =
                    eval_teacher_roundtrip(&teacher, &test_pool, t_len, cfg.num_sequences, &mut rng)?;
                report.seed = seed;
                report.timestamp = timestamp();
                let stem = format!(
                    "eval_roundtrip_d{}_T{t_len}_seed{}_teacher{}",
                    teacher.memory_dim(),
                    seed,
                    header.seed
                );
                write_json(&cfg.out_dir.join(format!("{stem}.json")), &report)?;
                write_frame_csv(&cfg.out_dir.join(format!("{stem}.csv")), &report.per_frame_mse)?;
                println!(
                    "roundtrip d={} T={t_len} teacher-seed={}: mse {:.6} psnr {:.2} ssim {:.4}",
                    teacher.memory_dim(),
                    header.seed,
                    report.mean_mse,
                    report.psnr_db,
                    report.ssim
                );
                reports.push(report);
            }
            if reports.len() > 1 {
                let summary = summarize_reports(&reports)?;
                let path = cfg
                    .out_dir
                    .join(format!("eval_roundtrip_d{}_T{t_len}_summary.json", summary.memory_dim));
                write_json(&path, &summary)?;
                println!(
                    "summary over {} teachers: mse {:.6} +/- {:.6}, psnr {:.2} +/- {:.2}, ssim {:.4} +/- {:.4}",
                    reports.len(),
                    summary.mse_mean,
                    summary.mse_std,
                    summary.psnr_mean,
                    summary.psnr_std,
                    summary.ssim_mean,
                    summary.ssim_std
                );
            }
        }
        "student-prefix" | "end-of-sequence" => {
            let teacher_path = teacher_paths
                .first()
                .ok_or_else(|| CliError::Validation("a teacher checkpoint is required".into()))?;
            let student_path = student_path.ok_or_else(|| {
                CliError::Validation(format!("--student is required for protocol {protocol}"))
            })?;
            let (teacher, _) = checkpoint::load_teacher(teacher_path)?;
            let (student, _) = checkpoint::load_student(student_path)?;
            if student.memory_dim() != teacher.memory_dim() {
                return Err(CliError::Validation(format!(
                    "student memory_dim {} does not match teacher {}",
                    student.memory_dim(),
                    teacher.memory_dim()
                )));
            }
            let mode = cfg.student.zero_leaf_mode;
            if protocol == "student-prefix" {
                let mut rng = Rng::new(seed).derive("eval-prefix");
                let curve = eval_student_prefix(
                    &student,
                    &teacher,
                    &test_pool,
                    cfg.num_sequences,
                    mode,
                    &mut rng,
                )?;
                let report = PrefixReport {
                    memory_dim: teacher.memory_dim(),
                    horizon: student.horizon(),
                    seed,
                    num_sequences: cfg.num_sequences,
                    prefix_mse: curve.clone(),
                    timestamp: timestamp(),
                };
                let stem =
                    format!("eval_prefix_d{}_T{}_seed{seed}", teacher.memory_dim(), student.horizon());
                write_json(&cfg.out_dir.join(format!("{stem}.json")), &report)?;
                write_frame_csv(&cfg.out_dir.join(format!("{stem}.csv")), &curve)?;
                println!(
                    "prefix d={} T={}: first {:.6} last {:.6}",
                    teacher.memory_dim(),
                    student.horizon(),
                    curve.first().unwrap_or(&f64::NAN),
                    curve.last().unwrap_or(&f64::NAN)
                );
            } else {
                let mut rng = Rng::new(seed).derive("eval-roundtrip");
                let (teacher_mse, student_mse) = eval_end_of_sequence(
                    &student,
                    &teacher,
                    &test_pool,
                    student.horizon(),
                    cfg.num_sequences,
                    mode,
                    &mut rng,
                )?;
                let report = EndOfSequenceReport {
                    memory_dim: teacher.memory_dim(),
                    horizon: student.horizon(),
                    seed,
                    num_sequences: cfg.num_sequences,
                    teacher_mse,
                    student_mse,
                    timestamp: timestamp(),
                };
                let stem = format!(
                    "eval_end_of_sequence_d{}_T{}_seed{seed}",
                    teacher.memory_dim(),
                    student.horizon()
                );
                write_json(&cfg.out_dir.join(format!("{stem}.json")), &report)?;
                println!(
                    "end-of-sequence d={} T={}: teacher {teacher_mse:.6} student {student_mse:.6}",
                    teacher.memory_dim(),
                    student.horizon()
                );
            }
        }
        other => {
            return Err(CliError::Validation(format!("unknown protocol '{other}'")));
        }
    }
    Ok(())
}

fn write_frame_csv(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let mut out = String::from("frame_index,mse\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{v}\n", i + 1));
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn bench_trajectory(cfg: &RunConfig, teacher_path: &Path, ns: &[usize]) -> Result<(), CliError> {
    if let Some(bad) = ns.iter().find(|n| !n.is_power_of_two()) {
        return Err(CliError::Validation(format!("n values must be powers of two, got {bad}")));
    }
    let (teacher, _) = checkpoint::load_teacher(teacher_path)?;
    let seed = cfg.seeds[0];
    let mode = cfg.student.zero_leaf_mode;

    let mut csv = String::from("n,incremental_merges,naive_merges,incremental_ms,naive_ms\n");
    for &n in ns {
        let mut rng = Rng::new(seed).derive("bench-latents");
        let latents: Vec<MemoryVector> = (0..n)
            .map(|_| {
                MemoryVector::new(
                    (0..teacher.memory_dim()).map(|_| rng.uniform_symmetric() as f32).collect(),
                )
            })
            .collect();

        let t0 = std::time::Instant::now();
        let (fast, inc_merges) = generate_trajectory_with_count(&teacher, &latents, mode)?;
        let inc_ms = t0.elapsed().as_secs_f64() * 1e3;
        let t1 = std::time::Instant::now();
        let (slow, naive_merges) = naive_trajectory_with_count(&teacher, &latents, mode)?;
        let naive_ms = t1.elapsed().as_secs_f64() * 1e3;

        // Counter laws and oracle equivalence are hard guarantees; a
        // benchmark that violates them reports garbage.
        let log_n = n.trailing_zeros() as u64;
        let expect_inc = (n as u64 - 1) + n as u64 * log_n;
        let expect_naive = (n as u64 + 1) * (n as u64 - 1);
        if inc_merges != expect_inc || naive_merges != expect_naive {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "merge counters diverged at n={n}: incremental {inc_merges} (law {expect_inc}), naive {naive_merges} (law {expect_naive})"
            )));
        }
        if fast != slow {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "incremental and naive trajectories diverged at n={n}"
            )));
        }
        csv.push_str(&format!("{n},{inc_merges},{naive_merges},{inc_ms:.3},{naive_ms:.3}\n"));
        println!(
            "n={n}: incremental {inc_merges} merges ({inc_ms:.2} ms), naive {naive_merges} merges ({naive_ms:.2} ms)"
        );
    }
    write_atomic(&cfg.out_dir.join("bench_trajectory.csv"), csv.as_bytes())?;
    Ok(())
}

pub fn data(cmd: crate::DataCommand) -> Result<(), CliError> {
    match cmd {
        crate::DataCommand::Convert { input, out_file } => {
            let full = resolve_data_path(&input);
            let bytes = std::fs::read(&full)
                .with_context(|| format!("reading {}", full.display()))
                .map_err(CliError::Runtime)?;
            let dataset = load_idx_images(&bytes)?;
            write_atomic(&out_file, &save_idx_images(&dataset))?;
            println!("converted {} images -> {}", dataset.len(), out_file.display());
        }
        crate::DataCommand::Split { count, ratio, seed, out_file } => {
            let split = make_split(count, ratio, seed)?;
            save_split(&out_file, &split)?;
            println!(
                "split {count} into {} train / {} test -> {}",
                split.train.len(),
                split.test.len(),
                out_file.display()
            );
        }
        crate::DataCommand::Synth { count, intrinsic_dim, seed, out_file } => {
            let dataset = synthetic_manifold(count, intrinsic_dim, seed);
            write_atomic(&out_file, &save_idx_images(&dataset))?;
            println!(
                "generated {count} synthetic images (intrinsic dim {intrinsic_dim}) -> {}",
                out_file.display()
            );
        }
    }
    Ok(())
}
