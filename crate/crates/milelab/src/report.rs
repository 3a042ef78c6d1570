//! Result files: per-run metric reports and train logs, a cross-schedule
//! comparison table, and plot-ready delimited data for the sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::experiments::RunOutput;
use crate::CliError;

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Metric columns of one run, in a stable order.
fn metric_columns(run: &RunOutput) -> Vec<(String, f64)> {
    let mut cols = vec![
        ("top1_real_acc".to_string(), run.report.top1_real_acc),
        ("real_f1".to_string(), run.report.real_f1),
    ];
    for (rho, v) in &run.report.f1_at {
        cols.push((format!("f1_at.{rho}"), *v));
    }
    cols.push(("label_coverage".to_string(), run.report.label_coverage));
    for (k, v) in &run.extra {
        cols.push((k.clone(), *v));
    }
    cols
}

/// Writes every per-run artifact plus the cross-schedule comparison table.
/// Errs on an empty result set.
pub fn emit_report(runs: &[RunOutput], out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if runs.is_empty() {
        return Err(CliError::EmptyResults);
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io { path: out_dir.display().to_string(), message: e.to_string() })?;
    let mut files = Vec::new();

    for run in runs {
        let report_path = out_dir.join(format!("report_{}.txt", run.name));
        write_file(&report_path, &run.report.to_text())?;
        files.push(report_path);

        let log_path = out_dir.join(format!("log_{}.tsv", run.name));
        let mut buf = Vec::new();
        run.log.write_tsv(&mut buf).map_err(|e| CliError::Io {
            path: log_path.display().to_string(),
            message: e.to_string(),
        })?;
        write_file(&log_path, &String::from_utf8(buf).expect("tsv is utf8"))?;
        files.push(log_path);
    }

    let comparison = comparison_table(runs);
    let cmp_path = out_dir.join("comparison.tsv");
    write_file(&cmp_path, &comparison)?;
    files.push(cmp_path);

    Ok(files)
}

/// Mean and sample std of every metric, grouped by schedule name.
/// One `<metric>_mean` and `<metric>_std` column pair per metric.
pub fn comparison_table(runs: &[RunOutput]) -> String {
    // group runs by schedule display name
    let mut by_schedule: BTreeMap<String, Vec<&RunOutput>> = BTreeMap::new();
    for run in runs {
        by_schedule.entry(run.schedule.as_str().to_string()).or_default().push(run);
    }
    // union of metric names, keeping first-seen order
    let mut metric_names: Vec<String> = Vec::new();
    for run in runs {
        for (name, _) in metric_columns(run) {
            if !metric_names.contains(&name) {
                metric_names.push(name);
            }
        }
    }

    let mut out = String::new();
    let _ = write!(out, "schedule\tseeds");
    for m in &metric_names {
        let _ = write!(out, "\t{m}_mean\t{m}_std");
    }
    let _ = writeln!(out);
    for (schedule, group) in &by_schedule {
        let _ = write!(out, "{schedule}\t{}", group.len());
        for m in &metric_names {
            let values: Vec<f64> = group
                .iter()
                .filter_map(|r| {
                    metric_columns(r).into_iter().find(|(n, _)| n == m).map(|(_, v)| v)
                })
                .collect();
            if values.is_empty() {
                let _ = write!(out, "\tnan\tnan");
            } else {
                let (mean, std) = mean_std(&values);
                let _ = write!(out, "\t{mean}\t{std}");
            }
        }
        let _ = writeln!(out);
    }
    out
}

/// Parses a comparison table back into `schedule -> metric -> (mean, std)`.
pub fn parse_comparison(text: &str) -> Result<BTreeMap<String, BTreeMap<String, (f64, f64)>>, CliError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(CliError::EmptyResults)?;
    let columns: Vec<&str> = header.split('\t').collect();
    let mut out = BTreeMap::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let mut metrics = BTreeMap::new();
        let mut i = 2;
        while i + 1 < fields.len() {
            let name = columns[i].strip_suffix("_mean").unwrap_or(columns[i]);
            let mean: f64 = fields[i].parse().map_err(|_| CliError::Config {
                reason: format!("bad number {:?} in comparison table", fields[i]),
            })?;
            let std: f64 = fields[i + 1].parse().map_err(|_| CliError::Config {
                reason: format!("bad number {:?} in comparison table", fields[i + 1]),
            })?;
            metrics.insert(name.to_string(), (mean, std));
            i += 2;
        }
        out.insert(fields[0].to_string(), metrics);
    }
    Ok(out)
}

/// `k_t` rows by `k_s` columns of F1 values, with grid headers.
pub fn write_heatmap(
    out_dir: &Path,
    k_t_grid: &[usize],
    k_s_grid: &[usize],
    matrix: &[Vec<f64>],
) -> Result<PathBuf, CliError> {
    let mut out = String::new();
    let _ = write!(out, "k_t\\k_s");
    for ks in k_s_grid {
        let _ = write!(out, "\t{ks}");
    }
    let _ = writeln!(out);
    for (i, kt) in k_t_grid.iter().enumerate() {
        let _ = write!(out, "{kt}");
        for v in &matrix[i] {
            let _ = write!(out, "\t{v}");
        }
        let _ = writeln!(out);
    }
    let path = out_dir.join("heatmap_ktks.tsv");
    write_file(&path, &out)?;
    Ok(path)
}

/// `(rho, accuracy, f1)` rows for the threshold sweep.
pub fn write_threshold_table(
    out_dir: &Path,
    table: &[(f64, f64, f64)],
) -> Result<PathBuf, CliError> {
    let mut out = String::from("rho\ttop1_real_acc\treal_f1\n");
    for (rho, acc, f1) in table {
        let _ = writeln!(out, "{rho}\t{acc}\t{f1}");
    }
    let path = out_dir.join("threshold_sweep.tsv");
    write_file(&path, &out)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScheduleKind;
    use mile_core::metrics::MetricsReport;
    use mile_core::schedule::TrainLog;

    fn fake_run(schedule: ScheduleKind, seed: u64, f1: f64) -> RunOutput {
        let mut f1_at = BTreeMap::new();
        f1_at.insert("0.25".to_string(), f1);
        f1_at.insert("0.5".to_string(), f1 - 0.05);
        RunOutput {
            name: format!("{}_seed{}", schedule.as_str(), seed),
            schedule,
            seed,
            report: MetricsReport {
                top1_real_acc: 0.8,
                real_f1: f1,
                f1_at,
                label_coverage: 1.2,
                jaccard: 0.4,
                precision_weighted_jaccard: 0.3,
                mean_pw_jaccard: 0.3,
                map_alternative: None,
                config_hash: 7,
                seed,
                dataset: "t".to_string(),
            },
            log: TrainLog::new(),
            extra: BTreeMap::new(),
            wall_secs: 0.0,
        }
    }

    #[test]
    fn comparison_table_roundtrips() {
        let runs = vec![
            fake_run(ScheduleKind::Mile, 1, 0.41),
            fake_run(ScheduleKind::Mile, 2, 0.43),
            fake_run(ScheduleKind::Sigmoid, 1, 0.29),
        ];
        let table = comparison_table(&runs);
        let parsed = parse_comparison(&table).unwrap();
        let mile = &parsed["mile"];
        assert!((mile["real_f1"].0 - 0.42).abs() < 1e-12);
        assert!((mile["f1_at.0.25"].0 - 0.42).abs() < 1e-12);
        let sig = &parsed["sigmoid"];
        assert_eq!(sig["real_f1"], (0.29, 0.0));
    }

    #[test]
    fn emit_report_rejects_empty_results() {
        let dir = std::env::temp_dir().join(format!("mile-report-{}", std::process::id()));
        assert!(matches!(emit_report(&[], &dir), Err(CliError::EmptyResults)));
    }

    #[test]
    fn heatmap_has_grid_headers_and_cells() {
        let dir = std::env::temp_dir().join(format!("mile-heatmap-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = write_heatmap(&dir, &[10, 20], &[5, 6, 7], &[
            vec![0.1, 0.2, 0.3],
            vec![0.4, 0.5, 0.6],
        ])
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "k_t\\k_s\t5\t6\t7");
        assert_eq!(lines[1].split('\t').count(), 4);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
