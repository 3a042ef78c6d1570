use super::*;
use crate::data::synth_digits;
use crate::nets::build_mlp;
use crate::rng::stream_rng;
use crate::Tensor32;

/// Tiny dataset + MLP spec used by the schedule unit tests.
fn tiny_data(n: usize) -> LabeledDataset<f32> {
    let mut ds = synth_digits::<f32>(n, 123).unwrap();
    // shrink images to 8x8 crops so phases run in microseconds
    let mut images = Vec::with_capacity(n * 64);
    for i in 0..n {
        let img = ds.image(i);
        for r in 10..18 {
            images.extend_from_slice(&img[r * 28 + 10..r * 28 + 18]);
        }
    }
    ds.images = images;
    ds.height = 8;
    ds.width = 8;
    ds
}

fn tiny_spec() -> ModelSpec {
    ModelSpec::Mlp { input_dim: 64, hidden_dims: vec![16] }
}

fn tiny_cfg() -> MileConfig<f32> {
    MileConfig {
        teacher_steps: 3,
        student_steps: 2,
        threshold: 0.25,
        total_budget: 10,
        batch_size: 8,
        learning_rate: 0.05,
        momentum: 0.9,
        weight_decay: 0.0,
        seed: 7,
        argmax_fallback: false,
    }
}

/// A network with zero weights and chosen final biases produces exactly those
/// biases as logits, which pins pseudo-label behavior precisely.
fn biased_net(biases: &[f32]) -> Network<f32> {
    let mut rng = stream_rng(1, 1, 0);
    let net = build_mlp::<f32>(4, &[], biases.len(), &mut rng).unwrap();
    for p in net.parameters() {
        p.fill(0.0);
    }
    net.parameters().last().unwrap().copy_from_slice(biases);
    net
}

fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

#[test]
fn config_invariants_are_enforced() {
    let mut cfg = tiny_cfg();
    cfg.teacher_steps = 0;
    assert!(cfg.validate().is_err());

    let mut cfg = tiny_cfg();
    cfg.student_steps = 0;
    assert!(cfg.validate().is_err());

    let mut cfg = tiny_cfg();
    cfg.total_budget = 4; // < teacher_steps + student_steps
    assert!(cfg.validate().is_err());

    let mut cfg = tiny_cfg();
    cfg.threshold = 1.0;
    assert!(cfg.validate().is_err());

    assert!(tiny_cfg().validate().is_ok());
}

#[test]
fn pseudo_labels_threshold_strictly() {
    let net = biased_net(&[logit(0.9), logit(0.3), logit(0.1)]);
    let x = Tensor32::from_vec(vec![0.0; 4], &[1, 4]).unwrap();
    let bits = make_pseudo_labels(&net, &x, 0.25, false).unwrap();
    assert_eq!(bits, vec![1.0, 1.0, 0.0]);
}

#[test]
fn all_below_threshold_gives_empty_row_by_default() {
    let net = biased_net(&[logit(0.2), logit(0.1), logit(0.05)]);
    let x = Tensor32::from_vec(vec![0.0; 4], &[1, 4]).unwrap();
    let bits = make_pseudo_labels(&net, &x, 0.25, false).unwrap();
    assert_eq!(bits, vec![0.0, 0.0, 0.0]);

    let with_fallback = make_pseudo_labels(&net, &x, 0.25, true).unwrap();
    assert_eq!(with_fallback, vec![1.0, 0.0, 0.0]);
}

#[test]
fn pseudo_label_sets_nest_as_threshold_rises() {
    use rand::Rng;
    let mut rng = stream_rng(55, 9, 0);
    for _ in 0..1000 {
        let c = rng.gen_range(2..12);
        let probs: Vec<f32> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
        let low = pseudo_labels_from_probs(&probs, c, 0.25, false);
        let high = pseudo_labels_from_probs(&probs, c, 0.5, false);
        for (l, h) in low.iter().zip(&high) {
            assert!(h <= l, "labels at 0.5 must be a subset of labels at 0.25");
        }
    }
}

#[test]
fn teacher_phase_counts_steps_and_moves_parameters() {
    let data = tiny_data(64);
    let cfg = tiny_cfg();
    let mut state = MileState::new(&tiny_spec(), data.class_count, &cfg).unwrap();
    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut log = TrainLog::new();

    let before = state.teacher.flat_parameters();
    let ran = run_teacher_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();
    assert_eq!(ran, cfg.teacher_steps);
    assert_eq!(state.teacher_steps_done, cfg.teacher_steps);
    assert_eq!(log.teacher_steps, cfg.teacher_steps);
    let after = state.teacher.flat_parameters();
    assert!(before.iter().zip(&after).any(|(a, b)| a != b), "teacher must move");
}

#[test]
fn student_phase_leaves_teacher_bitwise_frozen() {
    let data = tiny_data(64);
    let cfg = tiny_cfg();
    let mut state = MileState::new(&tiny_spec(), data.class_count, &cfg).unwrap();
    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut log = TrainLog::new();
    run_teacher_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();

    let teacher_before = state.teacher.flat_parameters();
    let ran = run_student_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();
    assert_eq!(ran, cfg.student_steps);
    assert_eq!(state.student_steps_done, cfg.student_steps);
    let teacher_after = state.teacher.flat_parameters();
    assert!(teacher_before.iter().zip(&teacher_after).all(|(a, b)| a.bits_eq(*b)));
}

#[test]
fn exhausted_budget_is_a_noop_signal() {
    let data = tiny_data(32);
    let mut cfg = tiny_cfg();
    cfg.total_budget = cfg.teacher_steps + cfg.student_steps;
    let mut state = MileState::new(&tiny_spec(), data.class_count, &cfg).unwrap();
    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut log = TrainLog::new();
    run_teacher_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();
    run_student_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();
    assert_eq!(state.remaining(&cfg), 0);
    let params = state.teacher.flat_parameters();
    assert_eq!(run_teacher_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap(), 0);
    assert!(params.iter().zip(&state.teacher.flat_parameters()).all(|(a, b)| a.bits_eq(*b)));
}

#[test]
fn student_loss_at_phase_start_matches_self_imitation() {
    // teacher == student and a fresh sampler: the first student loss equals
    // the BCE of the model against its own thresholded outputs.
    let data = tiny_data(64);
    let mut cfg = tiny_cfg();
    cfg.student_steps = 1;
    cfg.threshold = 0.05;
    let mut state = MileState::new(&tiny_spec(), data.class_count, &cfg).unwrap();
    state.copy_student_to_teacher();

    let mut probe_sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let indices = probe_sampler.next_batch();
    let x = data.batch_images(&indices);
    let pseudo = make_pseudo_labels(&state.student, &x, cfg.threshold, false).unwrap();
    let expected = with_no_grad(|| {
        bce_loss(&state.student.forward(&x).unwrap(), &pseudo).unwrap().item()
    });

    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut log = TrainLog::new();
    run_student_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();
    let got = log.records[0].loss;
    assert!((got - expected as f64).abs() < 1e-12, "got {got}, expected {expected}");
}

#[test]
fn run_mile_budget_equal_to_one_generation_runs_one_generation() {
    let data = tiny_data(64);
    let mut cfg = tiny_cfg();
    cfg.total_budget = cfg.teacher_steps + cfg.student_steps;
    let (_, log) = run_mile(&tiny_spec(), &data, &cfg).unwrap();
    assert_eq!(log.teacher_steps, cfg.teacher_steps);
    assert_eq!(log.student_steps, cfg.student_steps);
    assert_eq!(log.generation_summaries().len(), 1);
}

#[test]
fn next_teacher_is_bitwise_the_previous_student() {
    let data = tiny_data(64);
    let cfg = tiny_cfg();
    let mut state = MileState::new(&tiny_spec(), data.class_count, &cfg).unwrap();
    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut log = TrainLog::new();

    // generation 1
    state.copy_student_to_teacher();
    run_teacher_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();
    run_student_phase(&mut state, &data, &cfg, &mut sampler, &mut log).unwrap();
    state.generation += 1;
    let student_end_gen1 = state.student.flat_parameters();

    // generation 2 copy
    state.copy_student_to_teacher();
    let teacher_start_gen2 = state.teacher.flat_parameters();
    assert!(student_end_gen1.iter().zip(&teacher_start_gen2).all(|(a, b)| a.bits_eq(*b)));
    assert_eq!(state.student.param_l2_distance(&state.teacher), 0.0);
}

#[test]
fn budget_parity_between_mile_and_baseline_is_exact() {
    let data = tiny_data(64);
    for budget in [5, 10, 17, 23] {
        let mut cfg = tiny_cfg();
        cfg.total_budget = budget;
        let (_, mile_log) = run_mile(&tiny_spec(), &data, &cfg).unwrap();
        let (_, base_log) = run_baseline(&tiny_spec(), &data, &cfg, HeadKind::Sigmoid).unwrap();
        assert_eq!(mile_log.teacher_steps + mile_log.student_steps, budget);
        assert_eq!(base_log.baseline_steps, budget);
        assert_eq!(mile_log.total_backward_passes(), base_log.total_backward_passes());
    }
}

#[test]
fn baseline_with_zero_budget_returns_initialization() {
    let data = tiny_data(32);
    let mut cfg = tiny_cfg();
    cfg.total_budget = 0;
    let (net, log) = run_baseline(&tiny_spec(), &data, &cfg, HeadKind::Sigmoid).unwrap();
    assert_eq!(log.total_backward_passes(), 0);
    let mut rng = stream_rng(cfg.seed, crate::rng::streams::PARAM_INIT, 0);
    let fresh = tiny_spec().build::<f32>(data.class_count, HeadKind::Sigmoid, &mut rng).unwrap();
    assert!(net.params_bitwise_eq(&fresh));
}

#[test]
fn softmax_and_sigmoid_baselines_see_identical_batches() {
    // the batch stream depends only on (n, batch_size, seed)
    let mut a = BatchSampler::new(100, 10, 42);
    let mut b = BatchSampler::new(100, 10, 42);
    for _ in 0..30 {
        assert_eq!(a.next_batch(), b.next_batch());
    }
}

#[test]
fn noisy_student_regenerates_twice_at_thirds() {
    let data = tiny_data(64);
    let mut cfg = tiny_cfg();
    cfg.total_budget = 12;
    let (_, log) = run_noisy_student_schedule(&tiny_spec(), &data, &cfg).unwrap();
    assert_eq!(log.pseudo_label_regens, 2);
    assert_eq!(log.total_backward_passes(), 12);
    let phase_of = |step: usize| log.records[step].phase;
    assert_eq!(phase_of(3), Phase::NsPhase(1));
    assert_eq!(phase_of(4), Phase::NsPhase(2));
    assert_eq!(phase_of(7), Phase::NsPhase(2));
    assert_eq!(phase_of(8), Phase::NsPhase(3));
    assert_eq!(phase_of(11), Phase::NsPhase(3));
}

#[test]
fn noisy_student_truncates_non_divisible_budgets() {
    let data = tiny_data(64);
    let mut cfg = tiny_cfg();
    cfg.total_budget = 13;
    let (_, log) = run_noisy_student_schedule(&tiny_spec(), &data, &cfg).unwrap();
    assert_eq!(log.total_backward_passes(), 13);
    let count = |k: u8| log.records.iter().filter(|r| r.phase == Phase::NsPhase(k)).count();
    assert_eq!(count(1), 5);
    assert_eq!(count(2), 5);
    assert_eq!(count(3), 3);
}

#[test]
fn identical_seed_and_config_reproduce_the_student_bitwise() {
    let data = tiny_data(64);
    let cfg = tiny_cfg();
    let (a, _) = run_mile(&tiny_spec(), &data, &cfg).unwrap();
    let (b, _) = run_mile(&tiny_spec(), &data, &cfg).unwrap();
    assert!(a.params_bitwise_eq(&b));

    let mut other = cfg.clone();
    other.seed = 8;
    let (c, _) = run_mile(&tiny_spec(), &data, &other).unwrap();
    assert!(!a.params_bitwise_eq(&c));
}

#[test]
fn near_one_threshold_decays_student_outputs() {
    // all-zero pseudo-targets push every sigmoid down monotonically
    let data = tiny_data(64);
    let mut cfg = tiny_cfg();
    cfg.threshold = 0.999;
    cfg.student_steps = 8;
    cfg.total_budget = 16;
    cfg.momentum = 0.0;
    let mut state = MileState::new(&tiny_spec(), data.class_count, &cfg).unwrap();
    state.copy_student_to_teacher();

    let probe = data.batch_images(&(0..16).collect::<Vec<_>>());
    let mean_sigmoid = |net: &Network<f32>| -> f64 {
        let probs = with_no_grad(|| net.forward(&probe).unwrap().sigmoid());
        let mean = probs.data().iter().map(|v| v.as_f64()).sum::<f64>() / probs.numel() as f64;
        mean
    };

    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut log = TrainLog::new();
    let mut last = mean_sigmoid(&state.student);
    for _ in 0..4 {
        let mut step_cfg = cfg.clone();
        step_cfg.student_steps = 2;
        run_student_phase(&mut state, &data, &step_cfg, &mut sampler, &mut log).unwrap();
        let cur = mean_sigmoid(&state.student);
        assert!(cur < last, "mean sigmoid must decay: {cur} !< {last}");
        last = cur;
    }
    // every pseudo-target row was empty
    assert!(log.records.iter().all(|r| r.mean_positive_labels == 0.0));
}
