//! Procedural 28x28 digit pool: a 5x7 glyph per class, scaled up and
//! jittered per sample. Stands in for MNIST when no IDX files are around;
//! everything downstream only needs ten visually distinct classes.

use rand::Rng;

use super::{DataError, LabelVector, LabeledDataset, Split};
use crate::rng::{stream_rng, streams};
use crate::scalar::Scalar;

const GLYPHS: [[&str; 7]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

const SIDE: usize = 28;
const SCALE: usize = 3;

/// `n` random digits, uniform over classes, one-hot targets. Deterministic in
/// `(n, seed)`; each sample draws from its own derived rng. Stroke dropout,
/// clutter blobs, and noise keep single-digit classification genuinely
/// uncertain rather than trivially separable.
pub fn synth_digits<T: Scalar>(n: usize, seed: u64) -> Result<LabeledDataset<T>, DataError> {
    if n == 0 {
        return Err(DataError::BadRequest { reason: "synth_digits needs n > 0".into() });
    }
    let mut images = vec![T::zero(); n * SIDE * SIDE];
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = stream_rng(seed, streams::DATA_SAMPLE, i as u64);
        let class = rng.gen_range(0..10usize);
        let dx = rng.gen_range(-3i32..=3);
        let dy = rng.gen_range(-3i32..=3);
        let intensity = rng.gen_range(0.55..1.0);
        let canvas = &mut images[i * SIDE * SIDE..(i + 1) * SIDE * SIDE];
        // center the 15x21 glyph, then jitter
        let x0 = 6 + dx;
        let y0 = 3 + dy;
        for (gr, row) in GLYPHS[class].iter().enumerate() {
            for (gc, ch) in row.bytes().enumerate() {
                if ch != b'1' {
                    continue;
                }
                // occasional missing stroke cell
                if rng.gen_range(0.0..1.0) < 0.15 {
                    continue;
                }
                let cell = intensity * rng.gen_range(0.7..1.0);
                for sr in 0..SCALE {
                    for sc in 0..SCALE {
                        let y = y0 + (gr * SCALE + sr) as i32;
                        let x = x0 + (gc * SCALE + sc) as i32;
                        if (0..SIDE as i32).contains(&y) && (0..SIDE as i32).contains(&x) {
                            canvas[y as usize * SIDE + x as usize] = T::from_f64(cell);
                        }
                    }
                }
            }
        }
        // clutter blobs that may overlap the glyph
        for _ in 0..rng.gen_range(2..6) {
            let by = rng.gen_range(0..SIDE - 2);
            let bx = rng.gen_range(0..SIDE - 2);
            let bv = T::from_f64(rng.gen_range(0.3..0.85));
            for r in 0..3 {
                for c in 0..3 {
                    let px = &mut canvas[(by + r) * SIDE + bx + c];
                    *px = (*px).max(bv);
                }
            }
        }
        // background noise
        for px in canvas.iter_mut() {
            let noise = T::from_f64(rng.gen_range(0.0..0.12));
            *px = (*px + noise).min(T::one());
        }
        targets.push(LabelVector::one_hot(10, class));
    }
    Ok(LabeledDataset {
        images,
        channels: 1,
        height: SIDE,
        width: SIDE,
        n,
        targets,
        ground_truth_sets: None,
        split: Split::Train,
        class_count: 10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_valid() {
        let a = synth_digits::<f32>(64, 5).unwrap();
        let b = synth_digits::<f32>(64, 5).unwrap();
        assert!(a.images.iter().zip(&b.images).all(|(x, y)| x.bits_eq(*y)));
        a.validate().unwrap();
        assert_eq!((a.channels, a.height, a.width), (1, 28, 28));
    }

    #[test]
    fn rejects_empty_request() {
        assert!(synth_digits::<f32>(0, 1).is_err());
    }

    #[test]
    fn classes_are_distinguishable_by_pixels() {
        // mean intra-class distance should be well below inter-class distance
        let ds = synth_digits::<f32>(400, 9).unwrap();
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
        for i in 0..ds.n {
            by_class[ds.targets[i].single_class()].push(i);
        }
        let dist = |a: usize, b: usize| -> f32 {
            ds.image(a).iter().zip(ds.image(b)).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let mut intra = 0.0f32;
        let mut intra_n = 0;
        let mut inter = 0.0f32;
        let mut inter_n = 0;
        for c in 0..10 {
            let members = &by_class[c];
            for w in members.windows(2).take(5) {
                intra += dist(w[0], w[1]);
                intra_n += 1;
            }
            if let (Some(&a), Some(&b)) = (members.first(), by_class[(c + 1) % 10].first()) {
                inter += dist(a, b);
                inter_n += 1;
            }
        }
        assert!((intra / intra_n as f32) < (inter / inter_n as f32));
    }
}
