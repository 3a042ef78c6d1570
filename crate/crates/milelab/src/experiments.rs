//! Experiment orchestration: builds the benchmark datasets, trains every
//! schedule at the same seed and budget, evaluates, and hands the results to
//! the report writer. Runs execute in parallel worker slots; each run is
//! single-threaded and owns its models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use mile_core::data::{
    gen_colored_mnist_plus_envs, gen_multimnist, load_mnist_idx, synth_digits, LabeledDataset,
    Split,
};
use mile_core::io::{load_dataset, save_dataset, save_network};
use mile_core::metrics::{evaluate, predict, EvalConfig, EvalSettings, MetricsReport};
use mile_core::nets::{HeadKind, ModelSpec};
use mile_core::rng::derive_seed;
use mile_core::schedule::{
    run_baseline, run_mile, run_noisy_student_schedule, MileConfig, TrainLog,
};

use crate::config::{DataSource, ExperimentConfig, ExperimentKind, ModelKind, ScheduleKind};
use crate::{fnv1a64, CliError};

/// One finished training run with its evaluation.
pub struct RunOutput {
    pub name: String,
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub report: MetricsReport,
    pub log: TrainLog,
    /// experiment-specific scalars (e.g. restricted digit accuracy)
    pub extra: BTreeMap<String, f64>,
    pub wall_secs: f64,
}

pub struct ExperimentOutcome {
    pub runs: Vec<RunOutput>,
    /// (run name, error message) of failed runs; their markers are on disk
    pub failures: Vec<(String, String)>,
    pub files: Vec<PathBuf>,
}

/// Fixed-order parallel map over a task list with `workers` threads.
pub fn parallel_map<T, R, F>(tasks: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let queue = Mutex::new(tasks.into_iter().enumerate().collect::<Vec<_>>());
    let results: Mutex<Vec<Option<R>>> = {
        let n = queue.lock().unwrap().len();
        Mutex::new((0..n).map(|_| None).collect())
    };
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let item = queue.lock().unwrap().pop();
                let Some((idx, task)) = item else { break };
                let out = f(task);
                results.lock().unwrap()[idx] = Some(out);
            });
        }
    });
    results.into_inner().unwrap().into_iter().map(|r| r.expect("worker finished")).collect()
}

fn mile_config(cfg: &ExperimentConfig, seed: u64) -> MileConfig<f32> {
    MileConfig {
        teacher_steps: cfg.k_t,
        student_steps: cfg.k_s,
        threshold: cfg.rho as f32,
        total_budget: cfg.total_budget,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate as f32,
        momentum: cfg.momentum as f32,
        weight_decay: cfg.weight_decay as f32,
        seed,
        argmax_fallback: cfg.argmax_fallback,
    }
}

fn eval_settings(cfg: &ExperimentConfig) -> EvalSettings {
    EvalSettings {
        eval: EvalConfig { set_threshold: cfg.eval_set_threshold, force_top1: cfg.eval_force_top1 },
        f1_thresholds: cfg.eval_f1_thresholds.clone(),
    }
}

fn model_spec(cfg: &ExperimentConfig, ds: &LabeledDataset<f32>) -> ModelSpec {
    match cfg.model {
        ModelKind::SmallCnn => ModelSpec::SmallCnn { in_channels: ds.channels },
        ModelKind::Mlp => {
            ModelSpec::Mlp { input_dim: ds.sample_stride(), hidden_dims: cfg.mlp_hidden.clone() }
        }
    }
}

fn run_err(name: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Run { name: name.to_string(), message: e.to_string() }
}

/// Loads a cached dataset or generates and caches it.
fn cached<F>(cache_dir: &Path, tag: &str, key: u64, gen: F) -> Result<LabeledDataset<f32>, CliError>
where
    F: FnOnce() -> Result<LabeledDataset<f32>, CliError>,
{
    let path = cache_dir.join(format!("{tag}-{key:016x}.mild"));
    if path.exists() {
        if let Ok(ds) = load_dataset::<f32>(&path) {
            return Ok(ds);
        }
    }
    let ds = gen()?;
    if let Err(e) = save_dataset(&path, &ds) {
        return Err(CliError::Io { path: path.display().to_string(), message: e.to_string() });
    }
    Ok(ds)
}

fn digit_base(
    cfg: &ExperimentConfig,
    split: Split,
    seed: u64,
) -> Result<LabeledDataset<f32>, CliError> {
    match cfg.data_source {
        DataSource::Synthetic => {
            let stream = if split == Split::Train { 11 } else { 12 };
            let mut base = synth_digits::<f32>(cfg.base_n, derive_seed(seed, stream, 0))
                .map_err(|e| run_err("synth_digits", e))?;
            base.split = split;
            Ok(base)
        }
        DataSource::MnistIdx => {
            let dir = cfg.mnist_dir.as_ref().expect("validated");
            let (images, labels) = if split == Split::Train {
                (dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
            } else {
                (dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))
            };
            let mut base =
                load_mnist_idx::<f32>(&images, &labels).map_err(|e| run_err("load_mnist_idx", e))?;
            base.split = split;
            Ok(base)
        }
    }
}

fn data_key(cfg: &ExperimentConfig, seed: u64, what: &str) -> u64 {
    let text = format!(
        "{what} source={:?} dir={:?} base_n={} n_train={} n_test={} seed={seed}",
        cfg.data_source, cfg.mnist_dir, cfg.base_n, cfg.n_train, cfg.n_test
    );
    fnv1a64(text.as_bytes())
}

/// Train and test grids for one seed.
fn multimnist_pair(
    cfg: &ExperimentConfig,
    cache_dir: &Path,
    seed: u64,
) -> Result<(LabeledDataset<f32>, LabeledDataset<f32>), CliError> {
    let train = cached(cache_dir, "multimnist-train", data_key(cfg, seed, "mm-train"), || {
        let base = digit_base(cfg, Split::Train, seed)?;
        gen_multimnist(&base, cfg.n_train, derive_seed(seed, 13, 0))
            .map_err(|e| run_err("gen_multimnist", e))
    })?;
    let test = cached(cache_dir, "multimnist-test", data_key(cfg, seed, "mm-test"), || {
        let base = digit_base(cfg, Split::Test, seed)?;
        let mut ds = gen_multimnist(&base, cfg.n_test, derive_seed(seed, 14, 0))
            .map_err(|e| run_err("gen_multimnist", e))?;
        ds.split = Split::Test;
        Ok(ds)
    })?;
    Ok((train, test))
}

fn concat(mut a: LabeledDataset<f32>, b: &LabeledDataset<f32>) -> LabeledDataset<f32> {
    assert_eq!(a.sample_stride(), b.sample_stride());
    assert_eq!(a.class_count, b.class_count);
    a.images.extend_from_slice(&b.images);
    a.targets.extend_from_slice(&b.targets);
    a.n += b.n;
    match (&mut a.ground_truth_sets, &b.ground_truth_sets) {
        (Some(ga), Some(gb)) => ga.extend_from_slice(gb),
        (g, _) => *g = None,
    }
    a
}

/// The three color environments (0.9, 0.8, 0.1), each with blanks so any of
/// them can serve as a training environment in the rotation protocol.
fn cmnist_plus_parts(
    cfg: &ExperimentConfig,
    cache_dir: &Path,
    seed: u64,
) -> Result<Vec<LabeledDataset<f32>>, CliError> {
    let part = (cfg.n_train.div_ceil(2)).max(cfg.n_test);
    let needed = part * 3;
    (0..3)
        .map(|e| {
            cached(
                cache_dir,
                &format!("cmnistplus-part{e}"),
                data_key(cfg, seed, &format!("cm-part{e}")),
                || {
                    let mut base = digit_base(cfg, Split::Train, seed)?;
                    if base.n < needed {
                        return Err(CliError::Config {
                            reason: format!(
                                "base pool of {} digits cannot fill 3 parts of {part}",
                                base.n
                            ),
                        });
                    }
                    shrink(&mut base, needed);
                    let envs = gen_colored_mnist_plus_envs(
                        &base,
                        &[0.9, 0.8, 0.1],
                        &[true, true, true],
                        derive_seed(seed, 15, 0),
                    )
                    .map_err(|e| run_err("gen_colored_mnist_plus", e))?;
                    Ok(envs.into_iter().nth(e).expect("env"))
                },
            )
        })
        .collect()
}

fn shrink(ds: &mut LabeledDataset<f32>, n: usize) {
    if ds.n > n {
        ds.images.truncate(n * ds.sample_stride());
        ds.targets.truncate(n);
        if let Some(g) = &mut ds.ground_truth_sets {
            g.truncate(n);
        }
        ds.n = n;
    }
}

/// Keeps only samples whose single label is a digit class.
fn digits_only(ds: &LabeledDataset<f32>) -> LabeledDataset<f32> {
    let keep: Vec<usize> = (0..ds.n).filter(|&i| ds.targets[i].single_class() < 2).collect();
    let stride = ds.sample_stride();
    let mut images = Vec::with_capacity(keep.len() * stride);
    let mut targets = Vec::with_capacity(keep.len());
    let mut gt = ds.ground_truth_sets.as_ref().map(|_| Vec::with_capacity(keep.len()));
    for &i in &keep {
        images.extend_from_slice(ds.image(i));
        targets.push(ds.targets[i].clone());
        if let (Some(out), Some(src)) = (&mut gt, &ds.ground_truth_sets) {
            out.push(src[i].clone());
        }
    }
    LabeledDataset {
        images,
        channels: ds.channels,
        height: ds.height,
        width: ds.width,
        n: keep.len(),
        targets,
        ground_truth_sets: gt,
        split: ds.split,
        class_count: ds.class_count,
    }
}

fn train_schedule(
    cfg: &ExperimentConfig,
    schedule: ScheduleKind,
    seed: u64,
    train: &LabeledDataset<f32>,
    name: &str,
) -> Result<(mile_core::Network32, TrainLog), CliError> {
    let spec = model_spec(cfg, train);
    let mcfg = mile_config(cfg, seed);
    match schedule {
        ScheduleKind::Softmax => {
            run_baseline(&spec, train, &mcfg, HeadKind::Softmax).map_err(|e| run_err(name, e))
        }
        ScheduleKind::Sigmoid => {
            run_baseline(&spec, train, &mcfg, HeadKind::Sigmoid).map_err(|e| run_err(name, e))
        }
        ScheduleKind::Mile => run_mile(&spec, train, &mcfg).map_err(|e| run_err(name, e)),
        ScheduleKind::NoisyStudent => {
            run_noisy_student_schedule(&spec, train, &mcfg).map_err(|e| run_err(name, e))
        }
    }
}

/// Rotation protocol for the color benchmark: each environment is held out
/// once while the other two train the model; the headline number is the
/// held-out digit accuracy averaged over the three rotations. The reported
/// metrics file and checkpoint come from the canonical rotation (held-out
/// low-correlation environment).
fn run_cmnist_rotations(
    cfg: &ExperimentConfig,
    schedule: ScheduleKind,
    seed: u64,
    parts: &[LabeledDataset<f32>],
    out_dir: &Path,
) -> Result<RunOutput, CliError> {
    let name = format!("{}_seed{}", schedule.as_str(), seed);
    let started = Instant::now();
    let settings = eval_settings(cfg);
    let mut rot_accs = Vec::new();
    let mut canonical = None;
    for rot in 0..3usize {
        let mut train: Option<LabeledDataset<f32>> = None;
        for (e, p) in parts.iter().enumerate() {
            if e != rot {
                train = Some(match train {
                    None => p.clone(),
                    Some(acc) => concat(acc, p),
                });
            }
        }
        let train = train.expect("two training parts");
        let heldout = digits_only(&parts[rot]);
        let (net, log) = train_schedule(cfg, schedule, seed, &train, &name)?;
        let preds = predict(&net, &heldout, &settings.eval).map_err(|e| run_err(&name, e))?;
        let targets: Vec<usize> = heldout.targets.iter().map(|t| t.single_class()).collect();
        rot_accs.push(digit_block_accuracy(preds.scores(), &targets));
        if rot == 2 {
            canonical = Some((net, log, heldout));
        }
    }
    let (net, log, heldout) = canonical.expect("rotation 2 ran");
    let report = evaluate(&net, &heldout, &settings, cfg.config_hash(seed), seed, "cmnist_plus-test")
        .map_err(|e| run_err(&name, e))?;

    let mut extra = BTreeMap::new();
    extra.insert("digit_acc".to_string(), rot_accs[2]);
    for (rot, acc) in rot_accs.iter().enumerate() {
        extra.insert(format!("digit_acc_rot{rot}"), *acc);
    }
    extra.insert("digit_acc_env_avg".to_string(), rot_accs.iter().sum::<f64>() / 3.0);

    let ckpt = out_dir.join(format!("checkpoint_{name}.miln"));
    save_network(&ckpt, &net)
        .map_err(|e| CliError::Io { path: ckpt.display().to_string(), message: e.to_string() })?;

    Ok(RunOutput {
        name,
        schedule,
        seed,
        report,
        log,
        extra,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

/// Accuracy of the argmax restricted to the digit block `{0,1}` against the
/// single-label targets; the headline number for the color benchmark.
pub fn digit_block_accuracy(scores: &[Vec<f64>], targets: &[usize]) -> f64 {
    let mut correct = 0usize;
    for (row, &t) in scores.iter().zip(targets) {
        let pred = usize::from(row[1] > row[0]);
        if pred == t {
            correct += 1;
        }
    }
    correct as f64 / targets.len() as f64
}

/// Trains one schedule and evaluates it on the test split.
fn run_one(
    cfg: &ExperimentConfig,
    schedule: ScheduleKind,
    seed: u64,
    train: &LabeledDataset<f32>,
    test: &LabeledDataset<f32>,
    dataset_tag: &str,
    out_dir: &Path,
) -> Result<RunOutput, CliError> {
    let name = format!("{}_seed{}", schedule.as_str(), seed);
    let started = Instant::now();
    let (net, log) = train_schedule(cfg, schedule, seed, train, &name)?;
    let settings = eval_settings(cfg);
    let report = evaluate(&net, test, &settings, cfg.config_hash(seed), seed, dataset_tag)
        .map_err(|e| run_err(&name, e))?;
    let extra = BTreeMap::new();

    let ckpt = out_dir.join(format!("checkpoint_{name}.miln"));
    save_network(&ckpt, &net)
        .map_err(|e| CliError::Io { path: ckpt.display().to_string(), message: e.to_string() })?;

    Ok(RunOutput {
        name,
        schedule,
        seed,
        report,
        log,
        extra,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Dispatches one experiment config: one run per (seed, schedule) for the
/// comparison experiments, one run per cell for the sweeps. Failed runs leave
/// a `FAILED_<name>.txt` marker and do not abort the rest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, CliError> {
    ensure_dir(&cfg.out_dir)?;
    let cache_dir = cfg.out_dir.join("cache");
    ensure_dir(&cache_dir)?;

    match cfg.kind {
        ExperimentKind::Multimnist | ExperimentKind::CmnistPlus | ExperimentKind::MileVsNs => {
            let schedules = cfg.schedule_set();
            let tasks: Vec<(u64, ScheduleKind)> = cfg
                .seeds
                .iter()
                .flat_map(|&s| schedules.iter().map(move |&k| (s, k)))
                .collect();
            let results = parallel_map(tasks, cfg.workers, |(seed, schedule)| {
                let name = format!("{}_seed{}", schedule.as_str(), seed);
                let outcome = if cfg.kind == ExperimentKind::CmnistPlus {
                    cmnist_plus_parts(cfg, &cache_dir, seed).and_then(|parts| {
                        run_cmnist_rotations(cfg, schedule, seed, &parts, &cfg.out_dir)
                    })
                } else {
                    multimnist_pair(cfg, &cache_dir, seed).and_then(|(train, test)| {
                        run_one(cfg, schedule, seed, &train, &test, "multimnist-test", &cfg.out_dir)
                    })
                };
                outcome.map_err(|e| (name, e.to_string()))
            });
            let mut runs = Vec::new();
            let mut failures = Vec::new();
            for r in results {
                match r {
                    Ok(run) => runs.push(run),
                    Err((name, message)) => {
                        let marker = cfg.out_dir.join(format!("FAILED_{name}.txt"));
                        let _ = std::fs::write(&marker, &message);
                        failures.push((name, message));
                    }
                }
            }
            let mut files = Vec::new();
            if !runs.is_empty() {
                files = crate::report::emit_report(&runs, &cfg.out_dir)?;
            } else if failures.is_empty() {
                return Err(CliError::EmptyResults);
            }
            Ok(ExperimentOutcome { runs, failures, files })
        }
        ExperimentKind::SweepKtKs => {
            let (matrix, runs) = sweep_ktks(cfg, &cfg.k_t_grid.clone(), &cfg.k_s_grid.clone())?;
            let mut files = crate::report::emit_report(&runs, &cfg.out_dir)?;
            files.push(crate::report::write_heatmap(
                &cfg.out_dir,
                &cfg.k_t_grid,
                &cfg.k_s_grid,
                &matrix,
            )?);
            Ok(ExperimentOutcome { runs, failures: Vec::new(), files })
        }
        ExperimentKind::SweepRho => {
            let (table, runs) = sweep_threshold(cfg, &cfg.rho_grid.clone())?;
            let mut files = crate::report::emit_report(&runs, &cfg.out_dir)?;
            files.push(crate::report::write_threshold_table(&cfg.out_dir, &table)?);
            Ok(ExperimentOutcome { runs, failures: Vec::new(), files })
        }
    }
}

/// One iterated run per `(k_t, k_s)` cell at fixed budget and seed; the cell
/// value is the per-example F1 of the final student on the test split.
pub fn sweep_ktks(
    cfg: &ExperimentConfig,
    k_t_grid: &[usize],
    k_s_grid: &[usize],
) -> Result<(Vec<Vec<f64>>, Vec<RunOutput>), CliError> {
    if k_t_grid.is_empty() || k_s_grid.is_empty() {
        return Err(CliError::Config { reason: "sweep grids must be nonempty".into() });
    }
    ensure_dir(&cfg.out_dir)?;
    let cache_dir = cfg.out_dir.join("cache");
    ensure_dir(&cache_dir)?;
    let seed = cfg.seeds[0];
    let (train, test) = multimnist_pair(cfg, &cache_dir, seed)?;

    let cells: Vec<(usize, usize)> =
        k_t_grid.iter().flat_map(|&kt| k_s_grid.iter().map(move |&ks| (kt, ks))).collect();
    let results = parallel_map(cells, cfg.workers, |(kt, ks)| {
        let mut cell_cfg = cfg.clone();
        cell_cfg.k_t = kt;
        cell_cfg.k_s = ks;
        let mut run = run_one(
            &cell_cfg,
            ScheduleKind::Mile,
            seed,
            &train,
            &test,
            "multimnist-test",
            &cfg.out_dir,
        )?;
        run.name = format!("mile_kt{kt}_ks{ks}_seed{seed}");
        run.extra.insert("k_t".into(), kt as f64);
        run.extra.insert("k_s".into(), ks as f64);
        Ok::<RunOutput, CliError>(run)
    });

    let mut runs = Vec::new();
    for r in results {
        runs.push(r?);
    }
    let matrix = k_t_grid
        .iter()
        .enumerate()
        .map(|(i, _)| {
            k_s_grid
                .iter()
                .enumerate()
                .map(|(j, _)| runs[i * k_s_grid.len() + j].report.real_f1)
                .collect()
        })
        .collect();
    Ok((matrix, runs))
}

/// One iterated run per training threshold; rows are
/// `(rho, top-1 accuracy, per-example F1)` on the test split.
pub fn sweep_threshold(
    cfg: &ExperimentConfig,
    rho_grid: &[f64],
) -> Result<(Vec<(f64, f64, f64)>, Vec<RunOutput>), CliError> {
    if rho_grid.is_empty() {
        return Err(CliError::Config { reason: "sweep.rho_grid must be nonempty".into() });
    }
    ensure_dir(&cfg.out_dir)?;
    let cache_dir = cfg.out_dir.join("cache");
    ensure_dir(&cache_dir)?;
    let seed = cfg.seeds[0];
    let (train, test) = multimnist_pair(cfg, &cache_dir, seed)?;

    let results = parallel_map(rho_grid.to_vec(), cfg.workers, |rho| {
        let mut cell_cfg = cfg.clone();
        cell_cfg.rho = rho;
        let mut run = run_one(
            &cell_cfg,
            ScheduleKind::Mile,
            seed,
            &train,
            &test,
            "multimnist-test",
            &cfg.out_dir,
        )?;
        run.name = format!("mile_rho{rho}_seed{seed}");
        run.extra.insert("rho".into(), rho);
        Ok::<RunOutput, CliError>(run)
    });

    let mut runs = Vec::new();
    for r in results {
        runs.push(r?);
    }
    let table = rho_grid
        .iter()
        .zip(&runs)
        .map(|(&rho, run)| (rho, run.report.top1_real_acc, run.report.real_f1))
        .collect();
    Ok((table, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order_and_runs_everything() {
        let out = parallel_map((0..100).collect::<Vec<i64>>(), 4, |x| x * x);
        assert_eq!(out, (0..100).map(|x| x * x).collect::<Vec<i64>>());
    }

    #[test]
    fn digit_block_accuracy_restricts_to_first_two_classes() {
        let scores = vec![
            vec![0.9, 0.1, 0.99, 0.0], // digit pred 0
            vec![0.2, 0.4, 0.99, 0.9], // digit pred 1
        ];
        let acc = digit_block_accuracy(&scores, &[0, 0]);
        assert_eq!(acc, 0.5);
    }
}
