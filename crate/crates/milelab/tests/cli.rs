//! End-to-end runner tests on deliberately tiny configurations.

use std::path::PathBuf;

use milelab::config::ExperimentConfig;
use milelab::experiments::{run_experiment, sweep_ktks, sweep_threshold};
use milelab::report::parse_comparison;
use milelab::CliError;

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("milelab-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Tiny grid experiment: MLP model, small pools, budgets in the tens.
fn tiny_multimnist(tag: &str) -> ExperimentConfig {
    let out = tmp_dir(tag);
    ExperimentConfig::parse(&format!(
        "experiment = multimnist\n\
         seeds = 1,2,3\n\
         out_dir = {}\n\
         workers = 2\n\
         data.base_n = 200\n\
         data.n_train = 256\n\
         data.n_test = 64\n\
         model = mlp\n\
         model.hidden = 24\n\
         schedule.k_t = 4\n\
         schedule.k_s = 3\n\
         schedule.rho = 0.1\n\
         schedule.total_budget = 20\n\
         schedule.batch_size = 16\n\
         schedule.learning_rate = 0.05\n\
         schedule.momentum = 0.9\n",
        out.display()
    ))
    .unwrap()
}

#[test]
fn multimnist_experiment_produces_one_report_per_seed_and_schedule() {
    let cfg = tiny_multimnist("cards");
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    assert_eq!(outcome.runs.len(), 9, "3 seeds x (softmax, sigmoid, mile)");
    let reports = std::fs::read_dir(&cfg.out_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("report_"))
        .count();
    assert_eq!(reports, 9);
    assert!(cfg.out_dir.join("comparison.tsv").exists());
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
}

#[test]
fn rerunning_the_same_config_reproduces_the_summary_bitwise() {
    let cfg = tiny_multimnist("repro");
    run_experiment(&cfg).unwrap();
    let first = std::fs::read(cfg.out_dir.join("comparison.tsv")).unwrap();
    run_experiment(&cfg).unwrap();
    let second = std::fs::read(cfg.out_dir.join("comparison.tsv")).unwrap();
    assert_eq!(first, second);
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
}

#[test]
fn comparison_table_parses_back_to_the_same_numbers() {
    let cfg = tiny_multimnist("parse");
    let outcome = run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(cfg.out_dir.join("comparison.tsv")).unwrap();
    let parsed = parse_comparison(&text).unwrap();
    // mean of the mile seeds recomputed from the per-run reports
    let mile_f1: Vec<f64> = outcome
        .runs
        .iter()
        .filter(|r| r.name.starts_with("mile"))
        .map(|r| r.report.real_f1)
        .collect();
    let mean = mile_f1.iter().sum::<f64>() / mile_f1.len() as f64;
    assert_eq!(parsed["mile"]["real_f1"].0, mean);
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
}

#[test]
fn missing_mnist_files_leave_failure_markers_but_do_not_abort() {
    let mut cfg = tiny_multimnist("failmark");
    cfg.data_source = milelab::config::DataSource::MnistIdx;
    cfg.mnist_dir = Some(PathBuf::from("/nonexistent-mnist"));
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.runs.is_empty());
    assert_eq!(outcome.failures.len(), 9);
    let markers = std::fs::read_dir(&cfg.out_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("FAILED_"))
        .count();
    assert_eq!(markers, 9);
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
}

#[test]
fn ktks_sweep_has_one_cell_per_grid_point() {
    let mut cfg = tiny_multimnist("ktks");
    cfg.kind = milelab::config::ExperimentKind::SweepKtKs;
    cfg.seeds = vec![1];
    let (matrix, runs) = sweep_ktks(&cfg, &[2, 4, 6], &[2, 3, 4]).unwrap();
    assert_eq!(runs.len(), 9);
    assert_eq!(matrix.len(), 3);
    for row in &matrix {
        assert_eq!(row.len(), 3);
        for &v in row {
            assert!((0.0..=1.0).contains(&v), "cell {v} out of range");
        }
    }
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
}

#[test]
fn threshold_sweep_emits_one_row_per_rho_and_survives_extremes() {
    let mut cfg = tiny_multimnist("rho");
    cfg.kind = milelab::config::ExperimentKind::SweepRho;
    cfg.seeds = vec![1];
    let grid = [0.1, 0.5, 0.99];
    let (table, runs) = sweep_threshold(&cfg, &grid).unwrap();
    assert_eq!(table.len(), grid.len());
    assert_eq!(runs.len(), grid.len());
    for (i, (rho, acc, f1)) in table.iter().enumerate() {
        assert_eq!(*rho, grid[i]);
        assert!((0.0..=1.0).contains(acc));
        assert!((0.0..=1.0).contains(f1));
    }
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
}

#[test]
fn cmnist_rotations_report_env_average() {
    let out = tmp_dir("cmnist");
    let cfg = ExperimentConfig::parse(&format!(
        "experiment = cmnist_plus\n\
         seeds = 1\n\
         out_dir = {}\n\
         workers = 2\n\
         data.base_n = 1200\n\
         data.n_train = 512\n\
         data.n_test = 128\n\
         model = mlp\n\
         model.hidden = 16\n\
         schedule.k_t = 4\n\
         schedule.k_s = 3\n\
         schedule.total_budget = 14\n\
         schedule.batch_size = 16\n",
        out.display()
    ))
    .unwrap();
    let outcome = run_experiment(&cfg).unwrap();
    assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    assert_eq!(outcome.runs.len(), 2, "softmax + mile");
    for run in &outcome.runs {
        let avg = run.extra["digit_acc_env_avg"];
        let mean_of_rots = (run.extra["digit_acc_rot0"]
            + run.extra["digit_acc_rot1"]
            + run.extra["digit_acc_rot2"])
            / 3.0;
        assert!((avg - mean_of_rots).abs() < 1e-12);
        assert_eq!(run.extra["digit_acc"], run.extra["digit_acc_rot2"]);
    }
    std::fs::remove_dir_all(&out).unwrap();
}

#[test]
fn budget_smaller_than_one_generation_is_a_config_error_at_run_time() {
    let mut cfg = tiny_multimnist("badbudget");
    cfg.k_t = 30;
    cfg.k_s = 30;
    cfg.total_budget = 10;
    let outcome = run_experiment(&cfg).unwrap();
    // mile runs fail validation; baselines do not need k_t/k_s
    assert_eq!(outcome.failures.len(), 3);
    assert!(outcome.failures.iter().all(|(name, _)| name.starts_with("mile")));
    assert_eq!(outcome.runs.len(), 6);
    std::fs::remove_dir_all(&cfg.out_dir).unwrap();
}

#[test]
fn empty_results_is_an_error() {
    assert!(matches!(
        milelab::report::emit_report(&[], &tmp_dir("empty")),
        Err(CliError::EmptyResults)
    ));
}
