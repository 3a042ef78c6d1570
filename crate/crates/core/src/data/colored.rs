//! Color-correlated digit environments.
//!
//! Binary digit label y = [digit >= 5], flipped with probability 0.25 (label
//! noise), then a color that matches y with the environment's correlation.
//! Images are two channels (red, green); the digit is drawn into the channel
//! selected by the color. The "+" variant adds a four-class layout
//! [digit-0, digit-1, color-green, color-red] and replaces a third of the
//! training samples with solid-color blanks labeled by their color.

use rand::Rng;

use super::{DataError, LabelSet, LabelVector, LabeledDataset, Split};
use crate::rng::{stream_rng, streams};
use crate::scalar::Scalar;

pub const DEFAULT_LABEL_NOISE: f64 = 0.25;
/// class indices of the color block in the "+" layout
pub const COLOR_CLASS_GREEN: usize = 2;
pub const COLOR_CLASS_RED: usize = 3;

const SIDE: usize = 28;
const BLANK_PROB: f64 = 1.0 / 3.0;

/// Per-sample label draw: noisy binary digit label and a color.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColorLabels {
    pub clean_label: u8,
    pub noisy_label: u8,
    /// 0 = red channel, 1 = green channel
    pub color: u8,
}

/// Draws the noise flip then the color flip; `P(color == noisy_label)` equals
/// `correlation`.
pub fn sample_color_labels(
    rng: &mut impl Rng,
    digit_class: usize,
    correlation: f64,
    label_noise: f64,
) -> ColorLabels {
    let clean = u8::from(digit_class >= 5);
    let noisy = if rng.gen_bool(label_noise) { 1 - clean } else { clean };
    let color = if rng.gen_bool(1.0 - correlation) { 1 - noisy } else { noisy };
    ColorLabels { clean_label: clean, noisy_label: noisy, color }
}

/// class index of a color in the "+" layout
fn color_class(color: u8) -> usize {
    if color == 1 {
        COLOR_CLASS_GREEN
    } else {
        COLOR_CLASS_RED
    }
}

fn check_base<T: Scalar>(base: &LabeledDataset<T>) -> Result<(), DataError> {
    if base.channels != 1 || base.height != SIDE || base.width != SIDE {
        return Err(DataError::BadRequest { reason: "base must be single-channel 28x28".into() });
    }
    if base.n == 0 {
        return Err(DataError::BadRequest { reason: "base dataset is empty".into() });
    }
    Ok(())
}

fn check_correlations(env_correlations: &[f64], test_correlation: f64) -> Result<(), DataError> {
    if env_correlations.is_empty() {
        return Err(DataError::BadRequest { reason: "need at least one environment".into() });
    }
    for &c in env_correlations.iter().chain(std::iter::once(&test_correlation)) {
        if !(0.0..=1.0).contains(&c) {
            return Err(DataError::BadRequest { reason: format!("correlation {c} outside [0,1]") });
        }
    }
    Ok(())
}

/// Disjoint equal parts of the base, shuffled by the seed: one per training
/// environment plus a final test part.
fn partition(base_n: usize, parts: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..base_n).collect();
    let mut rng = stream_rng(seed, streams::DATA_SHUFFLE, 0);
    // Fisher-Yates
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let size = base_n / parts;
    (0..parts).map(|p| order[p * size..(p + 1) * size].to_vec()).collect()
}

fn render_two_channel<T: Scalar>(digit: &[T], color: u8, out: &mut Vec<T>) {
    // channel 0 = red, channel 1 = green
    if color == 0 {
        out.extend_from_slice(digit);
        out.extend(std::iter::repeat(T::zero()).take(SIDE * SIDE));
    } else {
        out.extend(std::iter::repeat(T::zero()).take(SIDE * SIDE));
        out.extend_from_slice(digit);
    }
}

/// Standard two-class environments: per-env datasets ordered
/// `[env_0, env_1, ..., test]`, each on its own disjoint slice of the base.
pub fn gen_colored_mnist<T: Scalar>(
    base: &LabeledDataset<T>,
    env_correlations: &[f64],
    test_correlation: f64,
    seed: u64,
) -> Result<Vec<LabeledDataset<T>>, DataError> {
    gen_colored_mnist_with_noise(base, env_correlations, test_correlation, DEFAULT_LABEL_NOISE, seed)
}

/// Same construction with an explicit label-noise rate.
pub fn gen_colored_mnist_with_noise<T: Scalar>(
    base: &LabeledDataset<T>,
    env_correlations: &[f64],
    test_correlation: f64,
    label_noise: f64,
    seed: u64,
) -> Result<Vec<LabeledDataset<T>>, DataError> {
    check_base(base)?;
    check_correlations(env_correlations, test_correlation)?;
    if !(0.0..=0.5).contains(&label_noise) {
        return Err(DataError::BadRequest { reason: format!("label noise {label_noise} outside [0,0.5]") });
    }
    let parts = partition(base.n, env_correlations.len() + 1, seed);
    let mut out = Vec::new();
    for (env, indices) in parts.iter().enumerate() {
        let is_test = env == env_correlations.len();
        let corr = if is_test { test_correlation } else { env_correlations[env] };
        let mut images = Vec::with_capacity(indices.len() * 2 * SIDE * SIDE);
        let mut targets = Vec::with_capacity(indices.len());
        for (j, &idx) in indices.iter().enumerate() {
            let mut rng = stream_rng(seed, streams::DATA_ENV_BASE + env as u64, j as u64);
            let labels =
                sample_color_labels(&mut rng, base.targets[idx].single_class(), corr, label_noise);
            render_two_channel(base.image(idx), labels.color, &mut images);
            targets.push(LabelVector::one_hot(2, labels.noisy_label as usize));
        }
        out.push(LabeledDataset {
            images,
            channels: 2,
            height: SIDE,
            width: SIDE,
            n: indices.len(),
            targets,
            ground_truth_sets: None,
            split: if is_test { Split::Test } else { Split::Train },
            class_count: 2,
        });
    }
    Ok(out)
}

/// Four-class variant: training environments mix digit images (labeled by the
/// noisy binary digit class) with solid-color blanks (labeled by their color
/// class); the test environment contains digit images only. Ground-truth sets
/// hold `{clean digit class, color class}` for digit images and the color
/// singleton for blanks.
pub fn gen_colored_mnist_plus<T: Scalar>(
    base: &LabeledDataset<T>,
    seed: u64,
) -> Result<Vec<LabeledDataset<T>>, DataError> {
    gen_colored_mnist_plus_envs(base, &[0.9, 0.8, 0.1], &[true, true, false], seed)
}

/// The underlying environment builder: one dataset per correlation, each on
/// its own disjoint slice of the base; `with_blanks[e]` controls whether the
/// environment mixes in color-labeled blank images (training environments do,
/// a digit-only test environment does not).
pub fn gen_colored_mnist_plus_envs<T: Scalar>(
    base: &LabeledDataset<T>,
    correlations: &[f64],
    with_blanks: &[bool],
    seed: u64,
) -> Result<Vec<LabeledDataset<T>>, DataError> {
    check_base(base)?;
    if correlations.is_empty() || correlations.len() != with_blanks.len() {
        return Err(DataError::BadRequest {
            reason: "need one with_blanks flag per correlation".into(),
        });
    }
    for &c in correlations {
        if !(0.0..=1.0).contains(&c) {
            return Err(DataError::BadRequest { reason: format!("correlation {c} outside [0,1]") });
        }
    }
    let parts = partition(base.n, correlations.len(), seed);
    let mut out = Vec::new();
    for (env, indices) in parts.iter().enumerate() {
        let is_test = !with_blanks[env];
        let corr = correlations[env];
        let mut images = Vec::with_capacity(indices.len() * 2 * SIDE * SIDE);
        let mut targets = Vec::with_capacity(indices.len());
        let mut gt_sets = Vec::with_capacity(indices.len());
        for (j, &idx) in indices.iter().enumerate() {
            let mut rng = stream_rng(seed, streams::DATA_ENV_BASE + env as u64, j as u64);
            let blank = !is_test && rng.gen_bool(BLANK_PROB);
            if blank {
                let color = u8::from(rng.gen_bool(0.5));
                // random fill level so blanks and digits overlap in total
                // mass and color cannot be shortcut by image brightness
                let fill = T::from_f64(rng.gen_range(0.1..1.0));
                if color == 0 {
                    images.extend(std::iter::repeat(fill).take(SIDE * SIDE));
                    images.extend(std::iter::repeat(T::zero()).take(SIDE * SIDE));
                } else {
                    images.extend(std::iter::repeat(T::zero()).take(SIDE * SIDE));
                    images.extend(std::iter::repeat(fill).take(SIDE * SIDE));
                }
                targets.push(LabelVector::one_hot(4, color_class(color)));
                gt_sets.push(LabelSet::singleton(color_class(color)));
            } else {
                let labels = sample_color_labels(
                    &mut rng,
                    base.targets[idx].single_class(),
                    corr,
                    DEFAULT_LABEL_NOISE,
                );
                render_two_channel(base.image(idx), labels.color, &mut images);
                targets.push(LabelVector::one_hot(4, labels.noisy_label as usize));
                gt_sets.push(LabelSet::new(vec![
                    labels.clean_label as usize,
                    color_class(labels.color),
                ]));
            }
        }
        out.push(LabeledDataset {
            images,
            channels: 2,
            height: SIDE,
            width: SIDE,
            n: indices.len(),
            targets,
            ground_truth_sets: Some(gt_sets),
            split: if is_test { Split::Test } else { Split::Train },
            class_count: 4,
        });
    }
    Ok(out)
}
