//! Flat `key = value` experiment configs with dotted keys. Unknown keys are
//! rejected by name; anything unset falls back to the documented default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::{fnv1a64, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Multimnist,
    CmnistPlus,
    SweepKtKs,
    SweepRho,
    MileVsNs,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Multimnist => "multimnist",
            ExperimentKind::CmnistPlus => "cmnist_plus",
            ExperimentKind::SweepKtKs => "sweep_ktks",
            ExperimentKind::SweepRho => "sweep_rho",
            ExperimentKind::MileVsNs => "mile_vs_ns",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Softmax,
    Sigmoid,
    Mile,
    NoisyStudent,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Softmax => "softmax",
            ScheduleKind::Sigmoid => "sigmoid",
            ScheduleKind::Mile => "mile",
            ScheduleKind::NoisyStudent => "noisy_student",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    MnistIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    SmallCnn,
    Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// schedules to run; empty means the experiment's default set
    pub schedules: Vec<ScheduleKind>,

    pub data_source: DataSource,
    pub mnist_dir: Option<PathBuf>,
    pub base_n: usize,
    pub n_train: usize,
    pub n_test: usize,

    pub model: ModelKind,
    pub mlp_hidden: Vec<usize>,

    pub k_t: usize,
    pub k_s: usize,
    pub rho: f64,
    pub total_budget: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub argmax_fallback: bool,

    pub eval_set_threshold: f64,
    pub eval_force_top1: bool,
    pub eval_f1_thresholds: Vec<f64>,

    pub k_t_grid: Vec<usize>,
    pub k_s_grid: Vec<usize>,
    pub rho_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Multimnist,
            seeds: vec![1],
            out_dir: PathBuf::from("runs"),
            workers: 2,
            schedules: Vec::new(),
            data_source: DataSource::Synthetic,
            mnist_dir: None,
            base_n: 4000,
            n_train: 12_000,
            n_test: 2_000,
            model: ModelKind::SmallCnn,
            mlp_hidden: vec![256],
            k_t: 90,
            k_s: 60,
            rho: 0.1,
            total_budget: 900,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            argmax_fallback: false,
            eval_set_threshold: 0.5,
            eval_force_top1: false,
            eval_f1_thresholds: vec![0.25, 0.5],
            k_t_grid: vec![45, 90, 180],
            k_s_grid: vec![30, 60, 120],
            rho_grid: vec![0.05, 0.1, 0.25, 0.5, 0.75],
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, key: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| CliError::Config {
                reason: format!("key {key}: cannot parse {s:?}"),
            })
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(value: &str, key: &str) -> Result<T, CliError> {
    value.trim().parse().map_err(|_| CliError::Config {
        reason: format!("key {key}: cannot parse {value:?}"),
    })
}

fn parse_bool(value: &str, key: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(CliError::Config { reason: format!("key {key}: cannot parse {other:?} as bool") }),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                reason: format!("expected key = value, got {line:?}"),
            })?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }

        let mut cfg = ExperimentConfig::default();
        let mut take = |key: &str| fields.remove(key);

        let kind = take("experiment").ok_or_else(|| CliError::Config {
            reason: "missing required key experiment".into(),
        })?;
        cfg.kind = match kind.as_str() {
            "multimnist" => ExperimentKind::Multimnist,
            "cmnist_plus" => ExperimentKind::CmnistPlus,
            "sweep_ktks" => ExperimentKind::SweepKtKs,
            "sweep_rho" => ExperimentKind::SweepRho,
            "mile_vs_ns" => ExperimentKind::MileVsNs,
            other => {
                return Err(CliError::Config { reason: format!("unknown experiment {other:?}") });
            }
        };

        if let Some(v) = take("seeds") {
            cfg.seeds = parse_list(&v, "seeds")?;
            if cfg.seeds.is_empty() {
                return Err(CliError::Config { reason: "seeds must be nonempty".into() });
            }
        }
        if let Some(v) = take("out_dir") {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = take("workers") {
            cfg.workers = parse_scalar(&v, "workers")?;
            if cfg.workers == 0 {
                return Err(CliError::Config { reason: "workers must be >= 1".into() });
            }
        }
        if let Some(v) = take("schedules") {
            cfg.schedules = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| match s {
                    "softmax" => Ok(ScheduleKind::Softmax),
                    "sigmoid" => Ok(ScheduleKind::Sigmoid),
                    "mile" => Ok(ScheduleKind::Mile),
                    "noisy_student" => Ok(ScheduleKind::NoisyStudent),
                    other => Err(CliError::Config { reason: format!("unknown schedule {other:?}") }),
                })
                .collect::<Result<_, _>>()?;
        }

        if let Some(v) = take("data.source") {
            cfg.data_source = match v.as_str() {
                "synthetic" => DataSource::Synthetic,
                "mnist_idx" => DataSource::MnistIdx,
                other => {
                    return Err(CliError::Config { reason: format!("unknown data source {other:?}") });
                }
            };
        }
        if let Some(v) = take("data.mnist_dir") {
            if !v.is_empty() {
                cfg.mnist_dir = Some(PathBuf::from(v));
            }
        }
        if let Some(v) = take("data.base_n") {
            cfg.base_n = parse_scalar(&v, "data.base_n")?;
        }
        if let Some(v) = take("data.n_train") {
            cfg.n_train = parse_scalar(&v, "data.n_train")?;
        }
        if let Some(v) = take("data.n_test") {
            cfg.n_test = parse_scalar(&v, "data.n_test")?;
        }

        if let Some(v) = take("model") {
            cfg.model = match v.as_str() {
                "small_cnn" => ModelKind::SmallCnn,
                "mlp" => ModelKind::Mlp,
                other => return Err(CliError::Config { reason: format!("unknown model {other:?}") }),
            };
        }
        if let Some(v) = take("model.hidden") {
            cfg.mlp_hidden = parse_list(&v, "model.hidden")?;
        }

        if let Some(v) = take("schedule.k_t") {
            cfg.k_t = parse_scalar(&v, "schedule.k_t")?;
        }
        if let Some(v) = take("schedule.k_s") {
            cfg.k_s = parse_scalar(&v, "schedule.k_s")?;
        }
        if let Some(v) = take("schedule.rho") {
            cfg.rho = parse_scalar(&v, "schedule.rho")?;
        }
        if let Some(v) = take("schedule.total_budget") {
            cfg.total_budget = parse_scalar(&v, "schedule.total_budget")?;
        }
        if let Some(v) = take("schedule.batch_size") {
            cfg.batch_size = parse_scalar(&v, "schedule.batch_size")?;
        }
        if let Some(v) = take("schedule.learning_rate") {
            cfg.learning_rate = parse_scalar(&v, "schedule.learning_rate")?;
        }
        if let Some(v) = take("schedule.momentum") {
            cfg.momentum = parse_scalar(&v, "schedule.momentum")?;
        }
        if let Some(v) = take("schedule.weight_decay") {
            cfg.weight_decay = parse_scalar(&v, "schedule.weight_decay")?;
        }
        if let Some(v) = take("schedule.argmax_fallback") {
            cfg.argmax_fallback = parse_bool(&v, "schedule.argmax_fallback")?;
        }

        if let Some(v) = take("eval.set_threshold") {
            cfg.eval_set_threshold = parse_scalar(&v, "eval.set_threshold")?;
        }
        if let Some(v) = take("eval.force_top1") {
            cfg.eval_force_top1 = parse_bool(&v, "eval.force_top1")?;
        }
        if let Some(v) = take("eval.f1_thresholds") {
            cfg.eval_f1_thresholds = parse_list(&v, "eval.f1_thresholds")?;
        }

        if let Some(v) = take("sweep.k_t_grid") {
            cfg.k_t_grid = parse_list(&v, "sweep.k_t_grid")?;
        }
        if let Some(v) = take("sweep.k_s_grid") {
            cfg.k_s_grid = parse_list(&v, "sweep.k_s_grid")?;
        }
        if let Some(v) = take("sweep.rho_grid") {
            cfg.rho_grid = parse_list(&v, "sweep.rho_grid")?;
        }

        if let Some(unknown) = fields.keys().next() {
            return Err(CliError::Config { reason: format!("unknown config key {unknown:?}") });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let fail = |reason: String| Err(CliError::Config { reason });
        if self.data_source == DataSource::MnistIdx && self.mnist_dir.is_none() {
            return fail("data.source = mnist_idx needs data.mnist_dir".into());
        }
        if self.batch_size == 0 || self.batch_size > self.n_train {
            return fail(format!(
                "schedule.batch_size {} must be in 1..={}",
                self.batch_size, self.n_train
            ));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return fail(format!("schedule.rho {} must lie strictly in (0,1)", self.rho));
        }
        for &r in &self.rho_grid {
            if !(r > 0.0 && r < 1.0) {
                return fail(format!("sweep.rho_grid entry {r} must lie strictly in (0,1)"));
            }
        }
        if self.k_t_grid.is_empty() || self.k_s_grid.is_empty() || self.rho_grid.is_empty() {
            return fail("sweep grids must be nonempty".into());
        }
        Ok(())
    }

    /// The schedules this experiment runs (config override or the default
    /// set for the experiment kind).
    pub fn schedule_set(&self) -> Vec<ScheduleKind> {
        if !self.schedules.is_empty() {
            return self.schedules.clone();
        }
        match self.kind {
            ExperimentKind::Multimnist => {
                vec![ScheduleKind::Softmax, ScheduleKind::Sigmoid, ScheduleKind::Mile]
            }
            ExperimentKind::CmnistPlus => vec![ScheduleKind::Softmax, ScheduleKind::Mile],
            ExperimentKind::SweepKtKs | ExperimentKind::SweepRho => vec![ScheduleKind::Mile],
            ExperimentKind::MileVsNs => vec![ScheduleKind::Mile, ScheduleKind::NoisyStudent],
        }
    }

    /// Canonical text rendering; hashing this (plus the seed) gives each
    /// run's provenance hash.
    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment = {}", self.kind.as_str());
        let _ = writeln!(
            s,
            "seeds = {}",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "schedules = {}",
            self.schedule_set().iter().map(|k| k.as_str()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "data = {} base_n={} n_train={} n_test={}",
            match self.data_source {
                DataSource::Synthetic => "synthetic",
                DataSource::MnistIdx => "mnist_idx",
            },
            self.base_n,
            self.n_train,
            self.n_test
        );
        let _ = writeln!(
            s,
            "model = {} hidden={:?}",
            match self.model {
                ModelKind::SmallCnn => "small_cnn",
                ModelKind::Mlp => "mlp",
            },
            self.mlp_hidden
        );
        let _ = writeln!(
            s,
            "schedule = k_t={} k_s={} rho={} budget={} batch={} lr={} momentum={} wd={} fallback={}",
            self.k_t,
            self.k_s,
            self.rho,
            self.total_budget,
            self.batch_size,
            self.learning_rate,
            self.momentum,
            self.weight_decay,
            self.argmax_fallback
        );
        let _ = writeln!(
            s,
            "eval = threshold={} force_top1={} f1={:?}",
            self.eval_set_threshold, self.eval_force_top1, self.eval_f1_thresholds
        );
        let _ = writeln!(
            s,
            "sweep = k_t={:?} k_s={:?} rho={:?}",
            self.k_t_grid, self.k_s_grid, self.rho_grid
        );
        s
    }

    pub fn config_hash(&self, seed: u64) -> u64 {
        let mut text = self.canonical_text();
        let _ = writeln!(text, "seed = {seed}");
        fnv1a64(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# comment
experiment = multimnist
seeds = 1, 2, 3
out_dir = /tmp/x
schedule.k_t = 40     # trailing comment
schedule.k_s = 20
schedule.rho = 0.25
schedule.total_budget = 120
eval.f1_thresholds = 0.25,0.5
";

    #[test]
    fn parses_a_valid_config() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Multimnist);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.k_t, 40);
        assert_eq!(cfg.k_s, 20);
        assert_eq!(cfg.total_budget, 120);
        assert_eq!(cfg.eval_f1_thresholds, vec![0.25, 0.5]);
        assert_eq!(
            cfg.schedule_set(),
            vec![ScheduleKind::Softmax, ScheduleKind::Sigmoid, ScheduleKind::Mile]
        );
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = format!("{SAMPLE}\nschedule.k_q = 3\n");
        match ExperimentConfig::parse(&text) {
            Err(CliError::Config { reason }) => assert!(reason.contains("schedule.k_q"), "{reason}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_schedule_is_rejected() {
        let text = format!("{SAMPLE}\nschedules = mile,bogus\n");
        match ExperimentConfig::parse(&text) {
            Err(CliError::Config { reason }) => {
                assert!(reason.contains("unknown schedule"), "{reason}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_experiment_is_rejected() {
        match ExperimentConfig::parse("experiment = frobnicate\n") {
            Err(CliError::Config { reason }) => {
                assert!(reason.contains("unknown experiment"), "{reason}")
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_experiment_key_is_rejected() {
        assert!(ExperimentConfig::parse("seeds = 1\n").is_err());
    }

    #[test]
    fn config_hash_depends_on_seed_and_content() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_ne!(cfg.config_hash(1), cfg.config_hash(2));
        let other = ExperimentConfig::parse(&SAMPLE.replace("0.25", "0.3")).unwrap();
        assert_ne!(cfg.config_hash(1), other.config_hash(1));
        assert_eq!(cfg.config_hash(1), ExperimentConfig::parse(SAMPLE).unwrap().config_hash(1));
    }
}
