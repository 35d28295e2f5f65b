//! Model checkpoint format.
//!
//! Layout: 8-byte magic `IMFNCKPT`, u32 LE format version, u64 LE header
//! length, a JSON header, then the payload: every parameter tensor as
//! little-endian f32 in manifest order. The header carries the model
//! architecture, seed, a config echo, the tensor manifest (name, shape,
//! byte offset, byte length) and an FNV-1a64 integrity checksum over the
//! payload, verified on load. Writes are atomic (temp file then rename)
//! and byte-deterministic: saving the same model twice yields identical
//! files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng::{fnv1a64, Rng};
use crate::student::Student;
use crate::teacher::{Teacher, NUM_SWEEPERS};

const MAGIC: &[u8; 8] = b"IMFNCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Teacher { memory_dim: usize, codec_hidden: usize, levels: usize },
    Student { memory_dim: usize, horizon: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelKind,
    pub seed: u64,
    pub config_echo: BTreeMap<String, String>,
    pub manifest: Vec<TensorEntry>,
    pub payload_fnv1a64: String,
}

/// Writes bytes to a temp file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Visits every named network of a teacher in manifest order.
fn visit_teacher_nets_mut(
    teacher: &mut Teacher,
    mut f: impl FnMut(String, &mut Mlp) -> Result<()>,
) -> Result<()> {
    f("codec.encoder".into(), teacher.codec_mut().encoder_mut())?;
    f("codec.decoder".into(), teacher.codec_mut().decoder_mut())?;
    for level in 0..NUM_SWEEPERS {
        f(format!("sweeper{level}.merge"), teacher.sweeper_mut(level).merge_net_mut())?;
        f(format!("sweeper{level}.invert"), teacher.sweeper_mut(level).invert_net_mut())?;
    }
    Ok(())
}

fn teacher_nets(teacher: &Teacher) -> Vec<(String, &Mlp)> {
    let mut nets: Vec<(String, &Mlp)> = vec![
        ("codec.encoder".into(), teacher.codec().encoder()),
        ("codec.decoder".into(), teacher.codec().decoder()),
    ];
    for (level, sweeper) in teacher.sweepers().iter().enumerate() {
        nets.push((format!("sweeper{level}.merge"), sweeper.merge_net()));
        nets.push((format!("sweeper{level}.invert"), sweeper.invert_net()));
    }
    nets
}

/// Appends one net's tensors (weight then bias per layer) to the manifest
/// and payload.
fn pack_net(name: &str, net: &Mlp, manifest: &mut Vec<TensorEntry>, payload: &mut Vec<u8>) {
    for k in 0..net.layer_count() {
        let layer = net.layer(k);
        for (suffix, shape, values) in [
            ("weight", vec![layer.out_dim(), layer.in_dim()], layer.weight()),
            ("bias", vec![layer.out_dim()], layer.bias()),
        ] {
            let offset = payload.len() as u64;
            for v in values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            manifest.push(TensorEntry {
                name: format!("{name}.layer{k}.{suffix}"),
                shape,
                offset,
                len: (payload.len() as u64) - offset,
            });
        }
    }
}

/// Copies one net's tensors back out of the payload, validating names and
/// shapes against the freshly constructed architecture.
fn unpack_net(
    name: &str,
    net: &mut Mlp,
    manifest: &mut std::vec::IntoIter<TensorEntry>,
    payload: &[u8],
) -> Result<()> {
    fn fill(
        expected_name: String,
        expected_shape: Vec<usize>,
        values: &mut [f32],
        manifest: &mut std::vec::IntoIter<TensorEntry>,
        payload: &[u8],
    ) -> Result<()> {
        let entry = manifest
            .next()
            .ok_or_else(|| Error::Checkpoint(format!("manifest ended before {expected_name}")))?;
        if entry.name != expected_name {
            return Err(Error::Checkpoint(format!(
                "manifest entry {} where {expected_name} was expected",
                entry.name
            )));
        }
        if entry.shape != expected_shape {
            return Err(Error::Checkpoint(format!(
                "tensor {expected_name} has shape {:?}, expected {expected_shape:?}",
                entry.shape
            )));
        }
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        if entry.len as usize != values.len() * 4 || end > payload.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {expected_name} payload range {start}..{end} is invalid"
            )));
        }
        for (i, chunk) in payload[start..end].chunks_exact(4).enumerate() {
            values[i] = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        Ok(())
    }

    for k in 0..net.layer_count() {
        let layer = net.layer_mut(k);
        let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
        fill(
            format!("{name}.layer{k}.weight"),
            vec![out_dim, in_dim],
            layer.weight_mut(),
            manifest,
            payload,
        )?;
        let layer = net.layer_mut(k);
        fill(format!("{name}.layer{k}.bias"), vec![out_dim], layer.bias_mut(), manifest, payload)?;
    }
    Ok(())
}

fn encode(header: &CheckpointHeader, payload: &[u8]) -> Result<Vec<u8>> {
    let header_json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(20 + header_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(payload);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload_start = 20 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[20..payload_start])?;
    let payload = &bytes[payload_start..];
    let checksum = format!("{:016x}", fnv1a64(payload));
    if checksum != header.payload_fnv1a64 {
        return Err(Error::Checkpoint(format!(
            "payload checksum {checksum} does not match header {}",
            header.payload_fnv1a64
        )));
    }
    Ok((header, payload))
}

pub fn serialize_teacher(
    teacher: &Teacher,
    seed: u64,
    config_echo: BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    for (name, net) in teacher_nets(teacher) {
        pack_net(&name, net, &mut manifest, &mut payload);
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: ModelKind::Teacher {
            memory_dim: teacher.memory_dim(),
            codec_hidden: teacher.codec().hidden_dim(),
            levels: NUM_SWEEPERS,
        },
        seed,
        config_echo,
        manifest,
        payload_fnv1a64: format!("{:016x}", fnv1a64(&payload)),
    };
    encode(&header, &payload)
}

pub fn save_teacher(
    path: &Path,
    teacher: &Teacher,
    seed: u64,
    config_echo: BTreeMap<String, String>,
) -> Result<()> {
    write_atomic(path, &serialize_teacher(teacher, seed, config_echo)?)
}

pub fn deserialize_teacher(bytes: &[u8]) -> Result<(Teacher, CheckpointHeader)> {
    let (header, payload) = decode(bytes)?;
    let ModelKind::Teacher { memory_dim, codec_hidden, levels } = header.model else {
        return Err(Error::Checkpoint("expected a teacher checkpoint".into()));
    };
    if levels != NUM_SWEEPERS {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {levels} sweeper levels, this build uses {NUM_SWEEPERS}"
        )));
    }
    let mut teacher = Teacher::new(memory_dim, codec_hidden, &mut Rng::new(0));
    let mut manifest = header.manifest.clone().into_iter();
    visit_teacher_nets_mut(&mut teacher, |name, net| unpack_net(&name, net, &mut manifest, payload))?;
    if manifest.next().is_some() {
        return Err(Error::Checkpoint("manifest has trailing tensors".into()));
    }
    Ok((teacher, header))
}

pub fn load_teacher(path: &Path) -> Result<(Teacher, CheckpointHeader)> {
    deserialize_teacher(&std::fs::read(path)?)
}

pub fn serialize_student(
    student: &Student,
    seed: u64,
    config_echo: BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut manifest = Vec::new();
    let mut payload = Vec::new();
    pack_net("delta_net", student.delta_net(), &mut manifest, &mut payload);
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        model: ModelKind::Student {
            memory_dim: student.memory_dim(),
            horizon: student.horizon(),
        },
        seed,
        config_echo,
        manifest,
        payload_fnv1a64: format!("{:016x}", fnv1a64(&payload)),
    };
    encode(&header, &payload)
}

pub fn save_student(
    path: &Path,
    student: &Student,
    seed: u64,
    config_echo: BTreeMap<String, String>,
) -> Result<()> {
    write_atomic(path, &serialize_student(student, seed, config_echo)?)
}

pub fn deserialize_student(bytes: &[u8]) -> Result<(Student, CheckpointHeader)> {
    let (header, payload) = decode(bytes)?;
    let ModelKind::Student { memory_dim, horizon } = header.model else {
        return Err(Error::Checkpoint("expected a student checkpoint".into()));
    };
    let mut student = Student::new(memory_dim, horizon, &mut Rng::new(0));
    let mut manifest = header.manifest.clone().into_iter();
    unpack_net("delta_net", student.delta_net_mut(), &mut manifest, payload)?;
    if manifest.next().is_some() {
        return Err(Error::Checkpoint("manifest has trailing tensors".into()));
    }
    Ok((student, header))
}

pub fn load_student(path: &Path) -> Result<(Student, CheckpointHeader)> {
    deserialize_student(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn echo() -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("profile".into(), "desk".into());
        m.insert("memory_dim".into(), "8".into());
        m
    }

    #[test]
    fn teacher_roundtrip_is_bit_identical() {
        let mut rng = Rng::new(1);
        let teacher = Teacher::new(8, 8, &mut rng);
        let bytes = serialize_teacher(&teacher, 42, echo()).unwrap();
        let (loaded, header) = deserialize_teacher(&bytes).unwrap();
        assert_eq!(loaded.params_hash(), teacher.params_hash());
        assert_eq!(header.seed, 42);
        assert_eq!(header.config_echo.get("profile").unwrap(), "desk");

        // save -> load -> save is byte-identical.
        let again = serialize_teacher(&loaded, header.seed, header.config_echo.clone()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn student_roundtrip_is_bit_identical() {
        let mut rng = Rng::new(2);
        let student = Student::new(8, 4, &mut rng);
        let bytes = serialize_student(&student, 7, echo()).unwrap();
        let (loaded, header) = deserialize_student(&bytes).unwrap();
        assert_eq!(loaded.delta_net().params_hash(), student.delta_net().params_hash());
        assert_eq!(loaded.horizon(), 4);
        let again = serialize_student(&loaded, header.seed, header.config_echo).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn corrupted_payload_is_rejected() {
        let mut rng = Rng::new(3);
        let student = Student::new(4, 2, &mut rng);
        let mut bytes = serialize_student(&student, 1, echo()).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        let err = deserialize_student(&bytes).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn wrong_model_kind_is_rejected() {
        let mut rng = Rng::new(4);
        let teacher = Teacher::new(4, 8, &mut rng);
        let bytes = serialize_teacher(&teacher, 1, echo()).unwrap();
        assert!(deserialize_student(&bytes).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(decode(b"NOTACKPT0000000000000000").is_err());
    }

    #[test]
    fn files_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.ckpt");
        let mut rng = Rng::new(5);
        let teacher = Teacher::new(4, 8, &mut rng);
        save_teacher(&path, &teacher, 9, echo()).unwrap();
        let (loaded, _) = load_teacher(&path).unwrap();
        assert_eq!(loaded.params_hash(), teacher.params_hash());
        // No temp files left behind.
        let leftovers: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
