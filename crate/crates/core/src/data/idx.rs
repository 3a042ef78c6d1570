//! MNIST IDX files: big-endian headers, one byte per pixel/label.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{DataError, LabelVector, LabeledDataset, Split};
use crate::scalar::Scalar;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read, path: &Path) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(u32::from_be_bytes(buf))
}

fn read_payload(r: &mut impl Read, expected: usize, path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::with_capacity(expected);
    r.take(expected as u64 + 1).read_to_end(&mut buf).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if buf.len() != expected {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            expected_bytes: expected,
            found_bytes: buf.len(),
        });
    }
    Ok(buf)
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path).map(BufReader::new).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads an image/label file pair into a single-label dataset with pixels
/// scaled to [0,1]. The two headers must agree on the sample count.
pub fn load_mnist_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset<T>, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let mut ir = open(images_path)?;
    let magic = read_u32_be(&mut ir, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::WrongMagic {
            path: images_path.display().to_string(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n_images = read_u32_be(&mut ir, images_path)? as usize;
    let height = read_u32_be(&mut ir, images_path)? as usize;
    let width = read_u32_be(&mut ir, images_path)? as usize;
    let pixels = read_payload(&mut ir, n_images * height * width, images_path)?;

    let mut lr = open(labels_path)?;
    let magic = read_u32_be(&mut lr, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::WrongMagic {
            path: labels_path.display().to_string(),
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_u32_be(&mut lr, labels_path)? as usize;
    if n_labels != n_images {
        return Err(DataError::CountMismatch { images: n_images, labels: n_labels });
    }
    let labels = read_payload(&mut lr, n_labels, labels_path)?;

    let scale = T::from_f64(1.0 / 255.0);
    let images: Vec<T> = pixels.iter().map(|&b| T::from_f64(f64::from(b)) * scale).collect();
    let mut targets = Vec::with_capacity(n_images);
    for &l in &labels {
        if l > 9 {
            return Err(DataError::InvalidLabel { value: l });
        }
        targets.push(LabelVector::one_hot(10, l as usize));
    }

    Ok(LabeledDataset {
        images,
        channels: 1,
        height,
        width,
        n: n_images,
        targets,
        ground_truth_sets: None,
        split: Split::Train,
        class_count: 10,
    })
}
