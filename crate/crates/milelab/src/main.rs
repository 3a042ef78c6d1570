use std::path::PathBuf;
use std::process::ExitCode;

use milelab::config::ExperimentConfig;
use milelab::experiments::run_experiment;

const USAGE: &str = "\
usage: milelab run --config <path> [--seed-override N] [--workers K] [--out DIR]

Runs the experiment described by the config file and writes reports,
train logs, checkpoints, and plot data into the output directory.";

fn parse_args() -> Result<(PathBuf, Option<u64>, Option<usize>, Option<PathBuf>), String> {
    let mut args = std::env::args().skip(1);
    match args.next().as_deref() {
        Some("run") => {}
        Some("--help") | Some("-h") => return Err(USAGE.to_string()),
        other => return Err(format!("expected the `run` subcommand, got {other:?}\n\n{USAGE}")),
    }
    let mut config = None;
    let mut seed_override = None;
    let mut workers = None;
    let mut out = None;
    while let Some(flag) = args.next() {
        let mut value = |name: &str| {
            args.next().ok_or_else(|| format!("flag {name} needs a value\n\n{USAGE}"))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--seed-override" => {
                seed_override = Some(
                    value("--seed-override")?
                        .parse::<u64>()
                        .map_err(|e| format!("bad --seed-override: {e}"))?,
                );
            }
            "--workers" => {
                workers = Some(
                    value("--workers")?
                        .parse::<usize>()
                        .map_err(|e| format!("bad --workers: {e}"))?,
                );
            }
            "--out" => out = Some(PathBuf::from(value("--out")?)),
            other => return Err(format!("unknown flag {other:?}\n\n{USAGE}")),
        }
    }
    let config = config.ok_or_else(|| format!("--config is required\n\n{USAGE}"))?;
    Ok((config, seed_override, workers, out))
}

fn main() -> ExitCode {
    let (config_path, seed_override, workers, out) = match parse_args() {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    let text = match std::fs::read_to_string(&config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}: {e}", config_path.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(dir) = out {
        cfg.out_dir = dir;
    }

    println!(
        "experiment {} | {} seed(s) | {} worker(s) | out {}",
        cfg.kind.as_str(),
        cfg.seeds.len(),
        cfg.workers,
        cfg.out_dir.display()
    );
    match run_experiment(&cfg) {
        Ok(outcome) => {
            for run in &outcome.runs {
                println!(
                    "done {:<24} top1 {:.4}  f1 {:.4}  coverage {:.3}  ({:.1}s)",
                    run.name,
                    run.report.top1_real_acc,
                    run.report.real_f1,
                    run.report.label_coverage,
                    run.wall_secs
                );
            }
            for (name, message) in &outcome.failures {
                eprintln!("FAILED {name}: {message}");
            }
            println!("wrote {} file(s) under {}", outcome.files.len(), cfg.out_dir.display());
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
