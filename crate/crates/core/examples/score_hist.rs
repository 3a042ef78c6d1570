use mile_core::data::{gen_multimnist, synth_digits, Split};
use mile_core::io::load_network_into;
use mile_core::metrics::{predict, EvalConfig};
use mile_core::nets::build_small_cnn;
use mile_core::rng::{derive_seed, stream_rng};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = &args[1];
    let seed: u64 = args[2].parse().unwrap();
    let mut rng = stream_rng(seed, 1, 0);
    let net = build_small_cnn::<f32>(1, 10, &mut rng).unwrap();
    load_network_into(ckpt, &net).unwrap();

    let base = synth_digits::<f32>(4000, derive_seed(seed, 12, 0)).unwrap();
    let mut test = gen_multimnist(&base, 2000, derive_seed(seed, 14, 0)).unwrap();
    test.split = Split::Test;

    let preds = predict(&net, &test, &EvalConfig::default()).unwrap();
    let mut hist = [0usize; 10];
    let truth = test.truth_sets();
    let mut band_true = 0usize;
    let mut band_false = 0usize;
    for (i, row) in preds.scores().iter().enumerate() {
        for (c, &s) in row.iter().enumerate() {
            hist[((s * 10.0) as usize).min(9)] += 1;
            if s > 0.25 && s <= 0.5 {
                if truth[i].contains(c) { band_true += 1 } else { band_false += 1 }
            }
        }
    }
    println!("score histogram (deciles): {hist:?}");
    println!("scores in (0.25,0.5]: {} true-label, {} non-label", band_true, band_false);
}
