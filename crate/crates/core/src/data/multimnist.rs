//! 3x3 digit grids with a single stochastic label.
//!
//! Each 84x84 sample tiles nine digits drawn with replacement from a 28x28
//! base pool. The training label is the center digit's class with probability
//! 0.6, otherwise one of the eight peripheral positions uniformly (0.05
//! each); the ground-truth set records every class present in the grid.

use rand::rngs::StdRng;
use rand::Rng;

use super::{DataError, LabelSet, LabelVector, LabeledDataset};
use crate::rng::{stream_rng, streams};
use crate::scalar::Scalar;

pub const GRID_SIDE: usize = 3;
pub const GRID_CENTER_PROB: f64 = 0.6;
const DIGIT_SIDE: usize = 28;
const OUT_SIDE: usize = GRID_SIDE * DIGIT_SIDE;
const CENTER: usize = 4;

/// Which base samples land in each cell and which cell provides the label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridComposition {
    pub digit_indices: [usize; 9],
    pub label_position: usize,
}

/// Draws one grid: nine uniform base indices, then the labeled position
/// (center with probability 0.6, else uniform over the other eight cells).
pub fn sample_grid_composition(rng: &mut StdRng, base_n: usize) -> GridComposition {
    let mut digit_indices = [0usize; 9];
    for slot in digit_indices.iter_mut() {
        *slot = rng.gen_range(0..base_n);
    }
    let label_position = if rng.gen::<f64>() < GRID_CENTER_PROB {
        CENTER
    } else {
        let k = rng.gen_range(0..8usize);
        if k >= CENTER {
            k + 1
        } else {
            k
        }
    };
    GridComposition { digit_indices, label_position }
}

/// Generates `n` grids. Deterministic in `(base, n, seed)` regardless of the
/// worker count: every sample renders from its own derived rng.
pub fn gen_multimnist<T: Scalar>(
    base: &LabeledDataset<T>,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset<T>, DataError> {
    let workers = std::thread::available_parallelism().map_or(1, |c| c.get().min(4));
    gen_multimnist_with_workers(base, n, seed, workers)
}

pub fn gen_multimnist_with_workers<T: Scalar>(
    base: &LabeledDataset<T>,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<LabeledDataset<T>, DataError> {
    if n == 0 {
        return Err(DataError::BadRequest { reason: "gen_multimnist needs n > 0".into() });
    }
    if base.channels != 1 || base.height != DIGIT_SIDE || base.width != DIGIT_SIDE {
        return Err(DataError::BadRequest {
            reason: format!(
                "base must be single-channel 28x28, got {}x{}x{}",
                base.channels, base.height, base.width
            ),
        });
    }
    if base.n == 0 {
        return Err(DataError::BadRequest { reason: "base dataset is empty".into() });
    }

    let stride = OUT_SIDE * OUT_SIDE;
    let mut images = vec![T::zero(); n * stride];
    let mut targets = vec![LabelVector::one_hot(10, 0); n];
    let mut gt_sets = vec![LabelSet::empty(); n];

    let workers = workers.max(1);
    let chunk = n.div_ceil(workers);
    std::thread::scope(|scope| {
        let mut img_rest = images.as_mut_slice();
        let mut tgt_rest = targets.as_mut_slice();
        let mut gt_rest = gt_sets.as_mut_slice();
        let mut start = 0usize;
        while start < n {
            let len = chunk.min(n - start);
            let (img_chunk, img_tail) = img_rest.split_at_mut(len * stride);
            let (tgt_chunk, tgt_tail) = tgt_rest.split_at_mut(len);
            let (gt_chunk, gt_tail) = gt_rest.split_at_mut(len);
            img_rest = img_tail;
            tgt_rest = tgt_tail;
            gt_rest = gt_tail;
            let first = start;
            scope.spawn(move || {
                for j in 0..len {
                    let i = first + j;
                    let mut rng = stream_rng(seed, streams::DATA_SAMPLE, i as u64);
                    let comp = sample_grid_composition(&mut rng, base.n);
                    render_grid(base, &comp, &mut img_chunk[j * stride..(j + 1) * stride]);
                    let classes: Vec<usize> = comp
                        .digit_indices
                        .iter()
                        .map(|&d| base.targets[d].single_class())
                        .collect();
                    tgt_chunk[j] = LabelVector::one_hot(10, classes[comp.label_position]);
                    gt_chunk[j] = LabelSet::new(classes);
                }
            });
            start += len;
        }
    });

    Ok(LabeledDataset {
        images,
        channels: 1,
        height: OUT_SIDE,
        width: OUT_SIDE,
        n,
        targets,
        ground_truth_sets: Some(gt_sets),
        split: base.split,
        class_count: 10,
    })
}

fn render_grid<T: Scalar>(base: &LabeledDataset<T>, comp: &GridComposition, out: &mut [T]) {
    for (pos, &digit) in comp.digit_indices.iter().enumerate() {
        let (row0, col0) = (pos / GRID_SIDE * DIGIT_SIDE, pos % GRID_SIDE * DIGIT_SIDE);
        let src = base.image(digit);
        for r in 0..DIGIT_SIDE {
            let dst_off = (row0 + r) * OUT_SIDE + col0;
            out[dst_off..dst_off + DIGIT_SIDE]
                .copy_from_slice(&src[r * DIGIT_SIDE..(r + 1) * DIGIT_SIDE]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_digits;

    fn base() -> LabeledDataset<f32> {
        synth_digits(256, 11).unwrap()
    }

    #[test]
    fn label_position_marginal_matches_center_probability() {
        // composition-level check over 1e5 draws
        let base_n = 256;
        let mut center = 0usize;
        let mut periph = [0usize; 9];
        let trials = 100_000;
        for i in 0..trials {
            let mut rng = stream_rng(42, streams::DATA_SAMPLE, i as u64);
            let c = sample_grid_composition(&mut rng, base_n);
            if c.label_position == CENTER {
                center += 1;
            }
            periph[c.label_position] += 1;
        }
        let center_freq = center as f64 / trials as f64;
        assert!((center_freq - GRID_CENTER_PROB).abs() < 0.01, "center frequency {center_freq}");
        for (pos, &count) in periph.iter().enumerate() {
            if pos != CENTER {
                let freq = count as f64 / trials as f64;
                assert!((freq - 0.05).abs() < 0.01, "position {pos} frequency {freq}");
            }
        }
    }

    #[test]
    fn training_label_is_always_in_ground_truth_set() {
        let ds = gen_multimnist(&base(), 500, 7).unwrap();
        ds.validate().unwrap();
        let sets = ds.ground_truth_sets.as_ref().unwrap();
        for i in 0..ds.n {
            assert!(sets[i].contains(ds.targets[i].single_class()));
        }
    }

    #[test]
    fn degenerate_grid_of_identical_digits() {
        // base with a single sample: every grid cell holds the same digit
        let mut one = base();
        one.images.truncate(28 * 28);
        one.targets.truncate(1);
        one.n = 1;
        let d = one.targets[0].single_class();
        let ds = gen_multimnist(&one, 20, 3).unwrap();
        let sets = ds.ground_truth_sets.as_ref().unwrap();
        for i in 0..ds.n {
            assert_eq!(sets[i], LabelSet::singleton(d));
            assert_eq!(ds.targets[i].single_class(), d);
        }
    }

    #[test]
    fn parallel_generation_equals_serial_bitwise() {
        let b = base();
        let serial = gen_multimnist_with_workers(&b, 300, 21, 1).unwrap();
        let parallel = gen_multimnist_with_workers(&b, 300, 21, 4).unwrap();
        assert!(serial.images.iter().zip(&parallel.images).all(|(x, y)| x.bits_eq(*y)));
        assert_eq!(serial.targets, parallel.targets);
        assert_eq!(serial.ground_truth_sets, parallel.ground_truth_sets);
    }

    #[test]
    fn generation_is_pure_in_base_and_seed() {
        let b = base();
        let a = gen_multimnist(&b, 128, 5).unwrap();
        let c = gen_multimnist(&b, 128, 5).unwrap();
        assert!(a.images.iter().zip(&c.images).all(|(x, y)| x.bits_eq(*y)));
        let d = gen_multimnist(&b, 128, 6).unwrap();
        assert!(a.images.iter().zip(&d.images).any(|(x, y)| !x.bits_eq(*y)));
    }

    #[test]
    fn singleton_ground_truth_sets_are_essentially_impossible() {
        // About 1e-8 per grid for a near-uniform pool, so a seeded million
        // draws should contain none.
        let pool = synth_digits::<f32>(1000, 31).unwrap();
        let classes: Vec<usize> = pool.targets.iter().map(LabelVector::single_class).collect();
        let trials = 1_000_000u64;
        let mut singletons = 0usize;
        for i in 0..trials {
            let mut rng = stream_rng(1234, streams::DATA_SAMPLE, i);
            let comp = sample_grid_composition(&mut rng, pool.n);
            let first = classes[comp.digit_indices[0]];
            if comp.digit_indices.iter().all(|&d| classes[d] == first) {
                singletons += 1;
            }
        }
        assert_eq!(singletons, 0, "found {singletons} singleton grids in {trials} draws");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(gen_multimnist(&base(), 0, 1).is_err());
        let bad = synth_digits::<f32>(4, 1).map(|mut d| {
            d.height = 14;
            d
        });
        assert!(gen_multimnist(&bad.unwrap(), 4, 1).is_err());
    }
}
