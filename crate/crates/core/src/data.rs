//! Data ingestion and reproducible splits.
//!
//! Images travel as IDX files (big-endian magic 0x00000803, then count,
//! rows=28, cols=28, then unsigned-byte pixels scaled by 1/255). Splits are
//! persisted as JSON so a run can be reproduced from its artifacts alone.
//! The synthetic manifold generator produces images with a known low
//! intrinsic dimension for fast deterministic desk-scale runs.

use std::path::Path;

use crate::codec::{ImageVector, IMAGE_DIM};
use crate::error::{Error, Result};
use crate::rng::Rng;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IMG_SIDE: u32 = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Mnist,
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct ImageDataset {
    images: Vec<ImageVector>,
    source: DataSource,
}

impl ImageDataset {
    pub fn new(images: Vec<ImageVector>, source: DataSource) -> Self {
        Self { images, source }
    }

    pub fn images(&self) -> &[ImageVector] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn source(&self) -> DataSource {
        self.source
    }

    /// The images at the given indices, cloned in order.
    pub fn select(&self, indices: &[usize]) -> Result<Vec<ImageVector>> {
        indices
            .iter()
            .map(|&i| {
                self.images
                    .get(i)
                    .cloned()
                    .ok_or(Error::IndexOutOfRange { index: i, len: self.images.len() })
            })
            .collect()
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated file: need {end} bytes for header field at {offset}"),
        });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Parses an IDX image file: pixels flattened row-major, scaled into [0, 1].
pub fn load_idx_images(bytes: &[u8]) -> Result<ImageDataset> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"),
        });
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let rows = read_be_u32(bytes, 8)?;
    let cols = read_be_u32(bytes, 12)?;
    if rows != IMG_SIDE || cols != IMG_SIDE {
        return Err(Error::Parse {
            offset: 8,
            message: format!("expected {IMG_SIDE}x{IMG_SIDE} images, got {rows}x{cols}"),
        });
    }
    let expected_len = 16 + count * IMAGE_DIM;
    if bytes.len() < expected_len {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated payload: {} bytes, header promises {expected_len}", bytes.len()),
        });
    }
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * IMAGE_DIM;
        let pixels: Vec<f32> =
            bytes[start..start + IMAGE_DIM].iter().map(|&b| b as f32 / 255.0).collect();
        images.push(ImageVector::new(pixels)?);
    }
    Ok(ImageDataset::new(images, DataSource::Mnist))
}

/// Serializes a dataset back to IDX bytes, quantizing pixels to the nearest
/// 1/255 step. Round-trips exactly for datasets that came from IDX bytes.
pub fn save_idx_images(dataset: &ImageDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + dataset.len() * IMAGE_DIM);
    out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    out.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    out.extend_from_slice(&IMG_SIDE.to_be_bytes());
    out.extend_from_slice(&IMG_SIDE.to_be_bytes());
    for img in dataset.images() {
        out.extend(img.as_slice().iter().map(|&p| (p as f64 * 255.0).round() as u8));
    }
    out
}

/// Reproducible train/test index partition.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitIndices {
    pub split_seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic split: a seeded permutation of 0..n with the first
/// `floor(ratio * n)` indices as train, the rest as test.
pub fn make_split(n: usize, ratio: f64, seed: u64) -> Result<SplitIndices> {
    if !(0.0 < ratio && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if n == 0 {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed).derive("split");
    rng.shuffle(&mut perm);
    let train_count = (ratio * n as f64).floor() as usize;
    let test = perm.split_off(train_count);
    Ok(SplitIndices { split_seed: seed, train: perm, test })
}

pub fn save_split(path: &Path, split: &SplitIndices) -> Result<()> {
    let json = serde_json::to_string_pretty(split)?;
    crate::checkpoint::write_atomic(path, json.as_bytes())
}

pub fn load_split(path: &Path) -> Result<SplitIndices> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// `t_len` images drawn uniformly with replacement from the given index set.
pub fn sample_sequence(
    dataset: &ImageDataset,
    indices: &[usize],
    t_len: usize,
    rng: &mut Rng,
) -> Result<Vec<ImageVector>> {
    if indices.is_empty() {
        return Err(Error::Config("cannot sample a sequence from an empty index set".into()));
    }
    (0..t_len)
        .map(|_| {
            let idx = indices[rng.below(indices.len())];
            dataset
                .images()
                .get(idx)
                .cloned()
                .ok_or(Error::IndexOutOfRange { index: idx, len: dataset.len() })
        })
        .collect()
}

/// Images on a known low-dimensional manifold: `sigmoid(A u + b)` with a
/// seed-fixed Gaussian map `A` (784 x intrinsic_dim) and u uniform in
/// [-1, 1]^intrinsic_dim. Pre-sigmoid samples span at most
/// `intrinsic_dim + 1` dimensions (the columns of A plus the bias).
pub fn synthetic_manifold(count: usize, intrinsic_dim: usize, seed: u64) -> ImageDataset {
    assert!(intrinsic_dim > 0 && intrinsic_dim < IMAGE_DIM);
    let mut map_rng = Rng::new(seed).derive("manifold-map");
    // Pre-sigmoid std around 1.5 gives images with real contrast without
    // saturating the sigmoid: Var(A u) = s^2 * k / 3 per pixel.
    let scale = 1.5 * (3.0 / intrinsic_dim as f64).sqrt();
    let a: Vec<f64> =
        (0..IMAGE_DIM * intrinsic_dim).map(|_| scale * map_rng.standard_normal()).collect();
    let b: Vec<f64> = (0..IMAGE_DIM).map(|_| 0.5 * map_rng.standard_normal()).collect();

    let mut sample_rng = Rng::new(seed).derive("manifold-samples");
    let images = (0..count)
        .map(|_| {
            let u: Vec<f64> = (0..intrinsic_dim).map(|_| sample_rng.uniform_symmetric()).collect();
            let pixels: Vec<f32> = (0..IMAGE_DIM)
                .map(|p| {
                    let pre: f64 = b[p]
                        + (0..intrinsic_dim).map(|j| a[p * intrinsic_dim + j] * u[j]).sum::<f64>();
                    (1.0 / (1.0 + (-pre).exp())) as f32
                })
                .collect();
            ImageVector::new(pixels).expect("sigmoid output is in (0, 1)")
        })
        .collect();
    ImageDataset::new(images, DataSource::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(images: &[Vec<u8>]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        out.extend_from_slice(&(images.len() as u32).to_be_bytes());
        out.extend_from_slice(&28u32.to_be_bytes());
        out.extend_from_slice(&28u32.to_be_bytes());
        for img in images {
            out.extend_from_slice(img);
        }
        out
    }

    #[test]
    fn parse_single_all_white_image() {
        let bytes = idx_bytes(&[vec![255u8; IMAGE_DIM]]);
        let ds = load_idx_images(&bytes).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.images()[0].as_slice().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn parse_rejects_bad_magic_naming_it() {
        let mut bytes = idx_bytes(&[vec![0u8; IMAGE_DIM]]);
        bytes[3] = 0x01;
        let err = load_idx_images(&bytes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0x00000801"), "message: {msg}");
        assert!(msg.contains("byte 0"), "message: {msg}");
    }

    #[test]
    fn parse_rejects_truncation_with_offset() {
        let mut bytes = idx_bytes(&[vec![7u8; IMAGE_DIM]]);
        bytes.truncate(100);
        let err = load_idx_images(&bytes).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 100, .. }), "{err}");
    }

    #[test]
    fn parse_rejects_wrong_dims() {
        let mut bytes = idx_bytes(&[vec![0u8; IMAGE_DIM]]);
        bytes[11] = 27;
        assert!(load_idx_images(&bytes).is_err());
    }

    #[test]
    fn idx_roundtrip_is_identity() {
        let mut rng = Rng::new(1);
        let images: Vec<Vec<u8>> =
            (0..5).map(|_| (0..IMAGE_DIM).map(|_| rng.below(256) as u8).collect()).collect();
        let bytes = idx_bytes(&images);
        let ds = load_idx_images(&bytes).unwrap();
        let reserialized = save_idx_images(&ds);
        assert_eq!(bytes, reserialized);
        let ds2 = load_idx_images(&reserialized).unwrap();
        for (a, b) in ds.images().iter().zip(ds2.images()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn split_counts_and_determinism() {
        let s = make_split(10, 0.9, 7).unwrap();
        assert_eq!(s.train.len(), 9);
        assert_eq!(s.test.len(), 1);
        assert_eq!(s, make_split(10, 0.9, 7).unwrap());

        let big = make_split(60_000, 0.9, 42).unwrap();
        assert_eq!(big.train.len(), 54_000);
        assert_eq!(big.test.len(), 6_000);
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        for seed in [1u64, 2, 3] {
            for n in [1usize, 7, 100] {
                let s = make_split(n, 0.8, seed).unwrap();
                let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>(), "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn split_rejects_bad_ratio() {
        assert!(make_split(10, 0.0, 1).is_err());
        assert!(make_split(10, 1.0, 1).is_err());
        assert!(make_split(0, 0.5, 1).is_err());
    }

    #[test]
    fn split_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let s = make_split(50, 0.9, 11).unwrap();
        save_split(&path, &s).unwrap();
        assert_eq!(load_split(&path).unwrap(), s);
    }

    #[test]
    fn sample_sequence_length_determinism_membership() {
        let ds = synthetic_manifold(20, 3, 5);
        let indices = vec![2usize, 5, 7, 11];
        let a = sample_sequence(&ds, &indices, 8, &mut Rng::new(3)).unwrap();
        let b = sample_sequence(&ds, &indices, 8, &mut Rng::new(3)).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
        // Every drawn frame is one of the indexed images.
        let allowed: Vec<&ImageVector> = indices.iter().map(|&i| &ds.images()[i]).collect();
        for frame in &a {
            assert!(allowed.iter().any(|img| img.as_slice() == frame.as_slice()));
        }
        assert!(sample_sequence(&ds, &[], 4, &mut Rng::new(3)).is_err());
    }

    #[test]
    fn synthetic_manifold_range_and_determinism() {
        let a = synthetic_manifold(10, 4, 9);
        let b = synthetic_manifold(10, 4, 9);
        for (x, y) in a.images().iter().zip(b.images()) {
            assert_eq!(x.as_slice(), y.as_slice());
            assert!(x.as_slice().iter().all(|&p| p > 0.0 && p < 1.0));
        }
        assert_eq!(a.source(), DataSource::Synthetic);
    }

    #[test]
    fn synthetic_manifold_pre_sigmoid_rank_is_bounded() {
        let k = 4;
        let count = 40;
        let ds = synthetic_manifold(count, k, 13);
        // Recover pre-sigmoid values via logit and estimate matrix rank by
        // Gaussian elimination with a relative pivot tolerance.
        let mut rows: Vec<Vec<f64>> = ds
            .images()
            .iter()
            .map(|img| {
                img.as_slice()
                    .iter()
                    .map(|&p| {
                        let p = p as f64;
                        (p / (1.0 - p)).ln()
                    })
                    .collect()
            })
            .collect();
        let mut rank = 0;
        let tol = 1e-3;
        for col in 0..IMAGE_DIM {
            let Some(pivot_row) = (rank..rows.len())
                .max_by(|&i, &j| rows[i][col].abs().total_cmp(&rows[j][col].abs()))
            else {
                break;
            };
            if rows[pivot_row][col].abs() < tol {
                continue;
            }
            rows.swap(rank, pivot_row);
            let pivot = rows[rank][col];
            for r in 0..rows.len() {
                if r != rank {
                    let factor = rows[r][col] / pivot;
                    for c in col..IMAGE_DIM {
                        let v = rows[rank][c];
                        rows[r][c] -= factor * v;
                    }
                }
            }
            rank += 1;
            if rank == rows.len() {
                break;
            }
        }
        assert!(rank <= k + 1, "empirical rank {rank} exceeds {} ", k + 1);
        assert!(rank >= k, "degenerate manifold: rank {rank}");
    }
}
