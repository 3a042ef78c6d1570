//! Datasets: MNIST IDX ingestion, a procedural digit pool, and the synthetic
//! multi-label benchmarks (digit grids and color-correlated digits).

mod colored;
mod idx;
mod multimnist;
mod synth;

pub use colored::{
    gen_colored_mnist, gen_colored_mnist_plus, gen_colored_mnist_plus_envs,
    gen_colored_mnist_with_noise, sample_color_labels,
    ColorLabels, COLOR_CLASS_GREEN, COLOR_CLASS_RED, DEFAULT_LABEL_NOISE,
};
pub use idx::load_mnist_idx;
pub use multimnist::{
    gen_multimnist, gen_multimnist_with_workers, sample_grid_composition, GridComposition,
    GRID_CENTER_PROB, GRID_SIDE,
};
pub use synth::synth_digits;

use std::fmt;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum DataError {
    Io { path: String, message: String },
    WrongMagic { path: String, expected: u32, found: u32 },
    Truncated { path: String, expected_bytes: usize, found_bytes: usize },
    CountMismatch { images: usize, labels: usize },
    InvalidLabel { value: u8 },
    BadRequest { reason: String },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::Io { path, message } => write!(f, "{path}: {message}"),
            DataError::WrongMagic { path, expected, found } => {
                write!(f, "{path}: wrong magic {found:#010x}, expected {expected:#010x}")
            }
            DataError::Truncated { path, expected_bytes, found_bytes } => {
                write!(f, "{path}: truncated payload, expected {expected_bytes} bytes, found {found_bytes}")
            }
            DataError::CountMismatch { images, labels } => {
                write!(f, "image count {images} does not match label count {labels}")
            }
            DataError::InvalidLabel { value } => write!(f, "label byte {value} out of range 0..=9"),
            DataError::BadRequest { reason } => write!(f, "{reason}"),
        }
    }
}

impl std::error::Error for DataError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Binary multi-label target of length C.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVector {
    bits: Vec<u8>,
}

impl LabelVector {
    pub fn one_hot(class_count: usize, class: usize) -> Self {
        assert!(class < class_count, "class {class} out of range 0..{class_count}");
        let mut bits = vec![0u8; class_count];
        bits[class] = 1;
        LabelVector { bits }
    }

    pub fn from_bits(bits: Vec<u8>) -> Result<Self, DataError> {
        if bits.iter().any(|&b| b > 1) {
            return Err(DataError::BadRequest { reason: "label vector entries must be 0 or 1".into() });
        }
        Ok(LabelVector { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, class: usize) -> bool {
        self.bits[class] == 1
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn positives(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b == 1).map(|(i, _)| i).collect()
    }

    pub fn count_positives(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// The single positive class of a one-hot target.
    pub fn single_class(&self) -> usize {
        debug_assert_eq!(self.count_positives(), 1, "target is not one-hot");
        self.positives()[0]
    }
}

/// Sorted, deduplicated set of class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    classes: Vec<usize>,
}

impl LabelSet {
    pub fn new(mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        LabelSet { classes }
    }

    pub fn empty() -> Self {
        LabelSet { classes: Vec::new() }
    }

    pub fn singleton(class: usize) -> Self {
        LabelSet { classes: vec![class] }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.binary_search(&class).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.iter().copied()
    }

    pub fn intersection_count(&self, other: &LabelSet) -> usize {
        self.classes.iter().filter(|&&c| other.contains(c)).count()
    }

    pub fn union_count(&self, other: &LabelSet) -> usize {
        self.len() + other.len() - self.intersection_count(other)
    }

    pub fn is_subset_of(&self, other: &LabelSet) -> bool {
        self.classes.iter().all(|&c| other.contains(c))
    }

    pub fn without(&self, class: usize) -> LabelSet {
        LabelSet { classes: self.classes.iter().copied().filter(|&c| c != class).collect() }
    }
}

/// A split of images with single-label training targets and, where the
/// generator knows it, the full per-sample ground-truth class sets.
#[derive(Clone)]
pub struct LabeledDataset<T: Scalar> {
    /// row-major `[n, channels, height, width]`, values in [0,1]
    pub images: Vec<T>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n: usize,
    pub targets: Vec<LabelVector>,
    pub ground_truth_sets: Option<Vec<LabelSet>>,
    pub split: Split,
    pub class_count: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn sample_stride(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[T] {
        let s = self.sample_stride();
        &self.images[i * s..(i + 1) * s]
    }

    /// Gathers the given samples into a `[b, C, H, W]` input tensor.
    pub fn batch_images(&self, indices: &[usize]) -> Tensor<T> {
        let s = self.sample_stride();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::from_vec(data, &[indices.len(), self.channels, self.height, self.width])
            .expect("batch shape")
    }

    /// Flat `[b * C]` 0/1 targets for the given samples.
    pub fn batch_targets(&self, indices: &[usize]) -> Vec<T> {
        let mut out = Vec::with_capacity(indices.len() * self.class_count);
        for &i in indices {
            out.extend(self.targets[i].bits().iter().map(|&b| T::from_f64(f64::from(b))));
        }
        out
    }

    /// Single-label class indices for the given samples.
    pub fn batch_target_indices(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.targets[i].single_class()).collect()
    }

    /// Ground-truth sets if the generator recorded them, else the targets
    /// viewed as singleton sets.
    pub fn truth_sets(&self) -> Vec<LabelSet> {
        match &self.ground_truth_sets {
            Some(sets) => sets.clone(),
            None => self.targets.iter().map(|t| LabelSet::new(t.positives())).collect(),
        }
    }

    /// Construction-time invariants, used by tests.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.images.len() != self.n * self.sample_stride() {
            return Err(DataError::BadRequest { reason: "image buffer length mismatch".into() });
        }
        if self.targets.len() != self.n {
            return Err(DataError::BadRequest { reason: "target count mismatch".into() });
        }
        for t in &self.targets {
            if t.len() != self.class_count || t.count_positives() != 1 {
                return Err(DataError::BadRequest {
                    reason: "every target must be one-hot over class_count".into(),
                });
            }
        }
        if let Some(sets) = &self.ground_truth_sets {
            if sets.len() != self.n {
                return Err(DataError::BadRequest { reason: "ground-truth set count mismatch".into() });
            }
        }
        if self.images.iter().any(|v| *v < T::zero() || *v > T::one()) {
            return Err(DataError::BadRequest { reason: "pixel outside [0,1]".into() });
        }
        Ok(())
    }
}
