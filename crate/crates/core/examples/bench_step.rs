use mile_core::data::{gen_multimnist, synth_digits};
use mile_core::nets::{build_small_cnn, HeadKind, ModelSpec};
use mile_core::rng::stream_rng;
use mile_core::schedule::{run_baseline, MileConfig};
use mile_core::tensor::{kernels, with_no_grad};
use std::time::Instant;

fn main() {
    let base = synth_digits::<f32>(2000, 1).unwrap();
    let data = gen_multimnist(&base, 512, 2).unwrap();
    let mut rng = stream_rng(1, 1, 0);
    let net = build_small_cnn::<f32>(1, 10, &mut rng).unwrap();
    let idx: Vec<usize> = (0..32).collect();
    let x = data.batch_images(&idx);

    // forward only
    let t = Instant::now();
    for _ in 0..5 { let _ = with_no_grad(|| net.forward(&x).unwrap()); }
    println!("fwd only: {:?}/pass", t.elapsed() / 5);

    // forward + backward
    let t = Instant::now();
    for _ in 0..5 {
        let targets: Vec<f32> = (0..320).map(|i| f32::from(u8::from(i % 7 == 0))).collect();
        let loss = net.forward(&x).unwrap().bce_with_logits(&targets).unwrap();
        loss.backward().unwrap();
        net.zero_grad();
    }
    println!("fwd+bwd: {:?}/pass", t.elapsed() / 5);

    // raw saxpy matmul rate: 1024x1024x64
    let a = vec![0.5f32; 1024 * 64];
    let b = vec![0.25f32; 64 * 1024];
    let t = Instant::now();
    for _ in 0..10 { let c = kernels::matmul_nn(&a, &b, 1024, 64, 1024); std::hint::black_box(&c); }
    let macs = 10.0 * 1024.0 * 64.0 * 1024.0;
    println!("matmul_nn: {:.2} GMAC/s", macs / t.elapsed().as_secs_f64() / 1e9);

    let cfg = MileConfig::<f32> { total_budget: 5, batch_size: 32, seed: 1, ..Default::default() };
    let t = Instant::now();
    let (_, log) = run_baseline(&ModelSpec::SmallCnn { in_channels: 1 }, &data, &cfg, HeadKind::Sigmoid).unwrap();
    println!("train step: {:?}/step", t.elapsed() / log.total_backward_passes() as u32);
}
