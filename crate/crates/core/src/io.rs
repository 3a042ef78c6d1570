//! Flat binary files, little-endian.
//!
//! Network checkpoint: magic `MILN`, version u32, num_tensors u32, then per
//! tensor: rank u32, extents u32..., float32 payload.
//!
//! Dataset cache: magic `MILD`, version u32, a dataset header (n u32, c u32,
//! split u8), then the same tensor framing for images, targets, and an
//! optional ground-truth mask.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{LabelSet, LabelVector, LabeledDataset, Split};
use crate::nets::Network;
use crate::scalar::Scalar;

const NET_MAGIC: &[u8; 4] = b"MILN";
const DATA_MAGIC: &[u8; 4] = b"MILD";
const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(std::io::Error),
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    UnsupportedVersion { found: u32 },
    TensorCountMismatch { expected: usize, found: usize },
    ShapeMismatch { index: usize, expected: Vec<usize>, found: Vec<usize> },
    Corrupt { reason: String },
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::Io(e) => write!(f, "io error: {e}"),
            CheckpointError::BadMagic { expected, found } => write!(
                f,
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(expected)
            ),
            CheckpointError::UnsupportedVersion { found } => {
                write!(f, "unsupported version {found}")
            }
            CheckpointError::TensorCountMismatch { expected, found } => {
                write!(f, "checkpoint holds {found} tensors, network needs {expected}")
            }
            CheckpointError::ShapeMismatch { index, expected, found } => {
                write!(f, "tensor {index}: shape {found:?}, expected {expected:?}")
            }
            CheckpointError::Corrupt { reason } => write!(f, "corrupt file: {reason}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_tensor<T: Scalar>(w: &mut impl Write, shape: &[usize], data: &[T]) -> Result<()> {
    write_u32(w, shape.len() as u32)?;
    for &e in shape {
        write_u32(w, e as u32)?;
    }
    for v in data {
        w.write_all(&v.as_f32().to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<T: Scalar>(r: &mut impl Read) -> Result<(Vec<usize>, Vec<T>)> {
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(CheckpointError::Corrupt { reason: format!("implausible rank {rank}") });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut bytes = vec![0u8; numel * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok((shape, data))
}

fn check_magic(r: &mut impl Read, expected: &[u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != expected {
        return Err(CheckpointError::BadMagic { expected: *expected, found });
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    Ok(())
}

/// Writes all parameters of the network, in parameter order.
pub fn save_network<T: Scalar>(path: impl AsRef<Path>, net: &Network<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(NET_MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let params = net.parameters();
    write_u32(&mut w, params.len() as u32)?;
    for p in &params {
        write_tensor(&mut w, &p.shape(), &p.data())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint into an already-built network of matching shape.
pub fn load_network_into<T: Scalar>(path: impl AsRef<Path>, net: &Network<T>) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, NET_MAGIC)?;
    let count = read_u32(&mut r)? as usize;
    let params = net.parameters();
    if count != params.len() {
        return Err(CheckpointError::TensorCountMismatch { expected: params.len(), found: count });
    }
    for (i, p) in params.iter().enumerate() {
        let (shape, data): (Vec<usize>, Vec<T>) = read_tensor(&mut r)?;
        if shape != p.shape() {
            return Err(CheckpointError::ShapeMismatch { index: i, expected: p.shape(), found: shape });
        }
        p.copy_from_slice(&data);
    }
    Ok(())
}

/// Caches a generated dataset: images, one-hot targets, and (when present) a
/// 0/1 ground-truth membership mask, all in the checkpoint tensor framing.
pub fn save_dataset<T: Scalar>(path: impl AsRef<Path>, ds: &LabeledDataset<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATA_MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, ds.n as u32)?;
    write_u32(&mut w, ds.class_count as u32)?;
    w.write_all(&[match ds.split {
        Split::Train => 0u8,
        Split::Test => 1u8,
    }])?;
    let num_tensors = if ds.ground_truth_sets.is_some() { 3 } else { 2 };
    write_u32(&mut w, num_tensors)?;
    write_tensor(&mut w, &[ds.n, ds.channels, ds.height, ds.width], &ds.images)?;
    let mut targets = Vec::with_capacity(ds.n * ds.class_count);
    for t in &ds.targets {
        targets.extend(t.bits().iter().map(|&b| f32::from(b)));
    }
    write_tensor(&mut w, &[ds.n, ds.class_count], &targets)?;
    if let Some(sets) = &ds.ground_truth_sets {
        let mut mask = vec![0.0f32; ds.n * ds.class_count];
        for (i, s) in sets.iter().enumerate() {
            for c in s.iter() {
                mask[i * ds.class_count + c] = 1.0;
            }
        }
        write_tensor(&mut w, &[ds.n, ds.class_count], &mask)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<LabeledDataset<T>> {
    let mut r = BufReader::new(File::open(path)?);
    check_magic(&mut r, DATA_MAGIC)?;
    let n = read_u32(&mut r)? as usize;
    let class_count = read_u32(&mut r)? as usize;
    let mut split_byte = [0u8; 1];
    r.read_exact(&mut split_byte)?;
    let split = match split_byte[0] {
        0 => Split::Train,
        1 => Split::Test,
        other => {
            return Err(CheckpointError::Corrupt { reason: format!("bad split tag {other}") });
        }
    };
    let num_tensors = read_u32(&mut r)? as usize;
    if !(2..=3).contains(&num_tensors) {
        return Err(CheckpointError::Corrupt { reason: format!("bad tensor count {num_tensors}") });
    }
    let (img_shape, images): (Vec<usize>, Vec<T>) = read_tensor(&mut r)?;
    if img_shape.len() != 4 || img_shape[0] != n {
        return Err(CheckpointError::Corrupt { reason: format!("bad image shape {img_shape:?}") });
    }
    let (tgt_shape, targets_flat): (Vec<usize>, Vec<f32>) = read_tensor(&mut r)?;
    if tgt_shape != [n, class_count] {
        return Err(CheckpointError::Corrupt { reason: format!("bad target shape {tgt_shape:?}") });
    }
    let targets = targets_flat
        .chunks_exact(class_count)
        .map(|row| {
            LabelVector::from_bits(row.iter().map(|&v| u8::from(v != 0.0)).collect())
                .expect("mask bits")
        })
        .collect();
    let ground_truth_sets = if num_tensors == 3 {
        let (gt_shape, mask): (Vec<usize>, Vec<f32>) = read_tensor(&mut r)?;
        if gt_shape != [n, class_count] {
            return Err(CheckpointError::Corrupt { reason: format!("bad mask shape {gt_shape:?}") });
        }
        Some(
            mask.chunks_exact(class_count)
                .map(|row| {
                    LabelSet::new(
                        row.iter()
                            .enumerate()
                            .filter(|(_, &v)| v != 0.0)
                            .map(|(c, _)| c)
                            .collect(),
                    )
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(LabeledDataset {
        images,
        channels: img_shape[1],
        height: img_shape[2],
        width: img_shape[3],
        n,
        targets,
        ground_truth_sets,
        split,
        class_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_multimnist, synth_digits};
    use crate::nets::build_mlp;
    use crate::rng::stream_rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("mile-io-{name}-{}", std::process::id()))
    }

    #[test]
    fn network_checkpoint_roundtrip_is_bitwise() {
        let mut rng = stream_rng(3, 1, 0);
        let net = build_mlp::<f32>(6, &[5], 3, &mut rng).unwrap();
        let path = tmp("net.bin");
        save_network(&path, &net).unwrap();

        let mut rng2 = stream_rng(4, 1, 0);
        let other = build_mlp::<f32>(6, &[5], 3, &mut rng2).unwrap();
        assert!(!net.params_bitwise_eq(&other));
        load_network_into(&path, &other).unwrap();
        assert!(net.params_bitwise_eq(&other));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn wrong_magic_and_shape_are_rejected() {
        let mut rng = stream_rng(3, 1, 0);
        let net = build_mlp::<f32>(6, &[5], 3, &mut rng).unwrap();
        let path = tmp("badmagic.bin");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_network_into(&path, &net), Err(CheckpointError::BadMagic { .. })));

        let saved = tmp("shape.bin");
        save_network(&saved, &net).unwrap();
        let mut rng2 = stream_rng(3, 1, 0);
        let different = build_mlp::<f32>(7, &[5], 3, &mut rng2).unwrap();
        assert!(matches!(
            load_network_into(&saved, &different),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
        std::fs::remove_file(&path).unwrap();
        std::fs::remove_file(&saved).unwrap();
    }

    #[test]
    fn dataset_roundtrip_preserves_everything() {
        let base = synth_digits::<f32>(64, 3).unwrap();
        let ds = gen_multimnist(&base, 20, 8).unwrap();
        let path = tmp("dataset.bin");
        save_dataset(&path, &ds).unwrap();
        let back: LabeledDataset<f32> = load_dataset(&path).unwrap();
        assert_eq!(ds.n, back.n);
        assert_eq!(ds.class_count, back.class_count);
        assert_eq!(ds.split, back.split);
        assert!(ds.images.iter().zip(&back.images).all(|(a, b)| a.bits_eq(*b)));
        assert_eq!(ds.targets, back.targets);
        assert_eq!(ds.ground_truth_sets, back.ground_truth_sets);
        std::fs::remove_file(&path).unwrap();
    }
}
