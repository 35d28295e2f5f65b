//! Quantitative evaluation: image metrics and the roundtrip / prefix /
//! end-of-sequence protocols.
//!
//! All metrics run in f64. SSIM is pinned to one variant: 11x11 Gaussian
//! window with sigma 1.5, C1 = (0.01 * peak)^2, C2 = (0.03 * peak)^2,
//! peak = 1, windows restricted to fully-valid positions. Comparisons
//! against other SSIM implementations are only meaningful within this
//! artifact.

use crate::codec::ImageVector;
use crate::error::{Error, Result};
use crate::memtree::{zero_leaf, ZeroLeafMode};
use crate::rng::Rng;
use crate::student::Student;
use crate::sweeper::MemoryVector;
use crate::teacher::Teacher;

/// Mean over pixels of the squared difference.
pub fn mse(a: &ImageVector, b: &ImageVector) -> f64 {
    mse_slices(a.as_slice(), b.as_slice()).expect("ImageVector lengths are fixed")
}

pub fn mse_slices(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch { context: "mse operands", expected: a.len(), actual: b.len() });
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 * log10(peak^2 / mse)` in dB; `mse = 0` reports +infinity.
pub fn psnr(mse_value: f64, peak: f64) -> f64 {
    if mse_value == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (peak * peak / mse_value).log10()
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const IMG_SIDE: usize = 28;

fn gaussian_kernel_1d() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let center = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, slot) in k.iter_mut().enumerate() {
        let d = i as f64 - center;
        *slot = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *slot;
    }
    for slot in k.iter_mut() {
        *slot /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter of a 28x28 f64 image.
/// Output is (28 - 10) x (28 - 10).
fn gaussian_filter_valid(img: &[f64]) -> Vec<f64> {
    let k = gaussian_kernel_1d();
    let out_side = IMG_SIDE - SSIM_WINDOW + 1;
    // Rows first: 28 rows x out_side columns.
    let mut rows = vec![0.0f64; IMG_SIDE * out_side];
    for r in 0..IMG_SIDE {
        for c in 0..out_side {
            let mut acc = 0.0;
            for (j, &w) in k.iter().enumerate() {
                acc += w * img[r * IMG_SIDE + c + j];
            }
            rows[r * out_side + c] = acc;
        }
    }
    let mut out = vec![0.0f64; out_side * out_side];
    for r in 0..out_side {
        for c in 0..out_side {
            let mut acc = 0.0;
            for (i, &w) in k.iter().enumerate() {
                acc += w * rows[(r + i) * out_side + c];
            }
            out[r * out_side + c] = acc;
        }
    }
    out
}

/// Mean local SSIM between two 784-vectors reshaped row-major to 28x28.
pub fn ssim(a: &ImageVector, b: &ImageVector) -> f64 {
    let peak = 1.0f64;
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);

    let x: Vec<f64> = a.as_slice().iter().map(|&p| p as f64).collect();
    let y: Vec<f64> = b.as_slice().iter().map(|&p| p as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();

    let mu_x = gaussian_filter_valid(&x);
    let mu_y = gaussian_filter_valid(&y);
    let e_xx = gaussian_filter_valid(&xx);
    let e_yy = gaussian_filter_valid(&yy);
    let e_xy = gaussian_filter_valid(&xy);

    let mut sum = 0.0f64;
    for i in 0..mu_x.len() {
        let mx = mu_x[i];
        let my = mu_y[i];
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        sum += num / den;
    }
    sum / mu_x.len() as f64
}

/// One evaluation run's results; serialized as JSON by the CLI.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub memory_dim: usize,
    pub horizon: usize,
    pub seed: u64,
    pub num_sequences: usize,
    pub mean_mse: f64,
    pub per_frame_mse: Vec<f64>,
    pub psnr_db: f64,
    pub ssim: f64,
    pub timestamp: String,
}

/// Draws `t_len` frames uniformly with replacement from the pool.
fn draw_sequence(pool: &[ImageVector], t_len: usize, rng: &mut Rng) -> Vec<ImageVector> {
    (0..t_len).map(|_| pool[rng.below(pool.len())].clone()).collect()
}

/// Full roundtrip over sampled test sequences: MSE averaged overall and
/// broken down by frame index, plus PSNR and mean SSIM.
pub fn eval_teacher_roundtrip(
    teacher: &Teacher,
    testset: &[ImageVector],
    t_len: usize,
    num_sequences: usize,
    rng: &mut Rng,
) -> Result<EvalReport> {
    if testset.len() < t_len {
        return Err(Error::Config(format!(
            "test pool of {} images is smaller than sequence length {t_len}",
            testset.len()
        )));
    }
    if num_sequences == 0 {
        return Err(Error::Config("num_sequences must be positive".into()));
    }
    crate::teacher::tree_levels(t_len)?;
    let mut per_frame_sum = vec![0.0f64; t_len];
    let mut ssim_sum = 0.0f64;
    for _ in 0..num_sequences {
        let frames = draw_sequence(testset, t_len, rng);
        let recon = teacher.roundtrip(&frames)?;
        for (i, (orig, rec)) in frames.iter().zip(&recon).enumerate() {
            per_frame_sum[i] += mse(orig, rec);
            ssim_sum += ssim(orig, rec);
        }
    }
    let per_frame_mse: Vec<f64> =
        per_frame_sum.iter().map(|s| s / num_sequences as f64).collect();
    let mean_mse = per_frame_mse.iter().sum::<f64>() / t_len as f64;
    Ok(EvalReport {
        memory_dim: teacher.memory_dim(),
        horizon: t_len,
        seed: rng.seed(),
        num_sequences,
        mean_mse,
        psnr_db: psnr(mean_mse, 1.0),
        ssim: ssim_sum / (num_sequences * t_len) as f64,
        per_frame_mse,
        timestamp: String::new(),
    })
}

/// Prefix MSE curve for a given sequence of memory states m_1..m_T: at
/// step t, invert the state to T leaves, decode, and average MSE over the
/// first t frames only.
pub fn prefix_curve_for_states(
    teacher: &Teacher,
    states: &[MemoryVector],
    frames: &[ImageVector],
) -> Result<Vec<f64>> {
    let t_len = frames.len();
    if states.len() != t_len {
        return Err(Error::ShapeMismatch {
            context: "prefix states count",
            expected: t_len,
            actual: states.len(),
        });
    }
    let mut curve = Vec::with_capacity(t_len);
    for (t, state) in states.iter().enumerate() {
        let leaves = teacher.invert_down(state, t_len)?;
        let mut acc = 0.0f64;
        for i in 0..=t {
            let decoded = teacher.codec().decode(&leaves[i])?;
            acc += mse(&frames[i], &decoded);
        }
        curve.push(acc / (t + 1) as f64);
    }
    Ok(curve)
}

/// Online prefix retention: after t student updates, decode the first t
/// frames through the frozen teacher inversion stack and average MSE over
/// the prefix. Per-sequence prefix means are averaged across sequences.
pub fn eval_student_prefix(
    student: &Student,
    teacher: &Teacher,
    testset: &[ImageVector],
    num_sequences: usize,
    mode: ZeroLeafMode,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let t_len = student.horizon();
    if testset.len() < t_len {
        return Err(Error::Config(format!(
            "test pool of {} images is smaller than horizon {t_len}",
            testset.len()
        )));
    }
    crate::teacher::tree_levels(t_len)?;
    let m0 = student_start_state(teacher, t_len, mode)?;
    let mut curve = vec![0.0f64; t_len];
    for _ in 0..num_sequences {
        let frames = draw_sequence(testset, t_len, rng);
        let latents = teacher.encode_sequence(&frames)?;
        let states = student.rollout(&m0, &latents)?;
        let seq_curve = prefix_curve_for_states(teacher, &states, &frames)?;
        for (acc, v) in curve.iter_mut().zip(&seq_curve) {
            *acc += v;
        }
    }
    for v in curve.iter_mut() {
        *v /= num_sequences as f64;
    }
    Ok(curve)
}

/// The student's starting memory: the teacher's all-zero-leaves root.
pub fn student_start_state(teacher: &Teacher, t_len: usize, mode: ZeroLeafMode) -> Result<MemoryVector> {
    let zero = zero_leaf(teacher, mode)?;
    teacher.merge_up(&vec![zero; t_len])
}

/// Final-step comparison: decode the teacher root and the student's final
/// memory through the same inversion stack; mean pixel MSE of each against
/// the originals, averaged over sequences.
pub fn eval_end_of_sequence(
    student: &Student,
    teacher: &Teacher,
    testset: &[ImageVector],
    t_len: usize,
    num_sequences: usize,
    mode: ZeroLeafMode,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if student.horizon() != t_len {
        return Err(Error::ShapeMismatch {
            context: "student horizon vs requested length",
            expected: t_len,
            actual: student.horizon(),
        });
    }
    if testset.len() < t_len {
        return Err(Error::Config(format!(
            "test pool of {} images is smaller than sequence length {t_len}",
            testset.len()
        )));
    }
    crate::teacher::tree_levels(t_len)?;
    let m0 = student_start_state(teacher, t_len, mode)?;
    let mut teacher_sum = 0.0f64;
    let mut student_sum = 0.0f64;
    for _ in 0..num_sequences {
        let frames = draw_sequence(testset, t_len, rng);
        let latents = teacher.encode_sequence(&frames)?;

        let root = teacher.merge_up(&latents)?;
        teacher_sum += decode_state_mse(teacher, &root, &frames)?;

        let states = student.rollout(&m0, &latents)?;
        let final_state = states.last().expect("t_len >= 1");
        student_sum += decode_state_mse(teacher, final_state, &frames)?;
    }
    Ok((teacher_sum / num_sequences as f64, student_sum / num_sequences as f64))
}

/// Inverts a memory state to leaves, decodes, and averages MSE over frames.
fn decode_state_mse(teacher: &Teacher, state: &MemoryVector, frames: &[ImageVector]) -> Result<f64> {
    let leaves = teacher.invert_down(state, frames.len())?;
    let mut acc = 0.0f64;
    for (frame, leaf) in frames.iter().zip(&leaves) {
        let decoded = teacher.codec().decode(leaf)?;
        acc += mse(frame, &decoded);
    }
    Ok(acc / frames.len() as f64)
}

/// Mean and std of the headline metrics across per-seed reports, in the
/// format of the paper-profile summary table. Std is the sample standard
/// deviation (n - 1), 0 for a single report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Table1Summary {
    pub memory_dim: usize,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
}

pub fn summarize_reports(reports: &[EvalReport]) -> Result<Table1Summary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Config("cannot summarize zero reports".into()))?;
    if reports
        .iter()
        .any(|r| r.memory_dim != first.memory_dim || r.horizon != first.horizon)
    {
        return Err(Error::Config("summary reports must share memory_dim and horizon".into()));
    }
    let stats = |values: Vec<f64>| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, std)
    };
    let (mse_mean, mse_std) = stats(reports.iter().map(|r| r.mean_mse).collect());
    let (psnr_mean, psnr_std) = stats(reports.iter().map(|r| r.psnr_db).collect());
    let (ssim_mean, ssim_std) = stats(reports.iter().map(|r| r.ssim).collect());
    Ok(Table1Summary {
        memory_dim: first.memory_dim,
        horizon: first.horizon,
        seeds: reports.iter().map(|r| r.seed).collect(),
        mse_mean,
        mse_std,
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
    })
}
