//! Multi-label evaluation.
//!
//! A [`PredictionSet`] holds raw per-class sigmoid scores plus the label sets
//! thresholded from them; every metric is a pure function of predictions and
//! ground-truth sets. Reports serialize to a `key = value` text document that
//! parses back to identical numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{LabelSet, LabeledDataset};
use crate::nets::{HeadKind, Network};
use crate::scalar::Scalar;
use crate::tensor::{with_no_grad, TensorResult};

#[derive(Clone, Debug, PartialEq)]
pub enum MetricsError {
    EmptyTruthSet { index: usize },
    LengthMismatch { predictions: usize, truths: usize },
    BadThreshold { value: f64 },
    /// mAP over alternative labels needs at least one class with a positive
    NoAlternativePositives,
    ParseError { line: String, reason: String },
}

impl std::fmt::Display for MetricsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricsError::EmptyTruthSet { index } => {
                write!(f, "sample {index} has an empty ground-truth set")
            }
            MetricsError::LengthMismatch { predictions, truths } => {
                write!(f, "{predictions} predictions vs {truths} truth sets")
            }
            MetricsError::BadThreshold { value } => {
                write!(f, "threshold {value} must lie strictly in (0,1)")
            }
            MetricsError::NoAlternativePositives => {
                write!(f, "no class has an alternative-label positive")
            }
            MetricsError::ParseError { line, reason } => write!(f, "{reason}: {line:?}"),
        }
    }
}

impl std::error::Error for MetricsError {}

type Result<T> = std::result::Result<T, MetricsError>;

/// How evaluation prediction sets are formed from scores.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// set membership threshold (strict >)
    pub set_threshold: f64,
    /// force the argmax into every prediction set
    pub force_top1: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { set_threshold: 0.5, force_top1: false }
    }
}

/// Per-sample predicted label sets plus the raw scores they came from.
#[derive(Clone, Debug)]
pub struct PredictionSet {
    sets: Vec<LabelSet>,
    scores: Vec<Vec<f64>>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn sets_at(scores: &[Vec<f64>], threshold: f64, force_top1: bool) -> Vec<LabelSet> {
    scores
        .iter()
        .map(|row| {
            let mut classes: Vec<usize> =
                row.iter().enumerate().filter(|(_, &v)| v > threshold).map(|(j, _)| j).collect();
            if force_top1 {
                classes.push(argmax(row));
            }
            LabelSet::new(classes)
        })
        .collect()
}

impl PredictionSet {
    pub fn from_scores(scores: Vec<Vec<f64>>, cfg: &EvalConfig) -> Self {
        let sets = sets_at(&scores, cfg.set_threshold, cfg.force_top1);
        PredictionSet { sets, scores }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn sets(&self) -> &[LabelSet] {
        &self.sets
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    /// Prediction sets rebuilt from the stored scores at another threshold.
    pub fn sets_at_threshold(&self, threshold: f64) -> Vec<LabelSet> {
        sets_at(&self.scores, threshold, false)
    }
}

/// Per-class scores of a network over a dataset, batched in inference mode.
/// The head decides the normalization: per-class sigmoids for binary heads,
/// softmax probabilities for mutually exclusive heads (whose logits are only
/// defined up to a shift). Scores are clamped into the open interval (0,1).
pub fn predict<T: Scalar>(
    net: &Network<T>,
    ds: &LabeledDataset<T>,
    cfg: &EvalConfig,
) -> TensorResult<PredictionSet> {
    let mut scores = Vec::with_capacity(ds.n);
    let chunk = 256usize;
    let mut start = 0usize;
    while start < ds.n {
        let indices: Vec<usize> = (start..(start + chunk).min(ds.n)).collect();
        let x = ds.batch_images(&indices);
        let probs = with_no_grad(|| -> TensorResult<_> {
            let logits = net.forward(&x)?;
            match net.head {
                HeadKind::Sigmoid => Ok(logits.sigmoid()),
                HeadKind::Softmax => logits.softmax(),
            }
        })?;
        let data = probs.data();
        for row in data.chunks(ds.class_count) {
            scores.push(
                row.iter()
                    .map(|v| v.as_f64().clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
                    .collect(),
            );
        }
        start += chunk;
    }
    Ok(PredictionSet::from_scores(scores, cfg))
}

fn check_lengths(preds: &PredictionSet, truth_sets: &[LabelSet]) -> Result<()> {
    if preds.len() != truth_sets.len() {
        return Err(MetricsError::LengthMismatch { predictions: preds.len(), truths: truth_sets.len() });
    }
    Ok(())
}

/// Fraction of samples whose top-scoring class belongs to the ground-truth
/// set. Errs on an empty truth set.
pub fn top1_real_accuracy(preds: &PredictionSet, truth_sets: &[LabelSet]) -> Result<f64> {
    check_lengths(preds, truth_sets)?;
    let mut correct = 0usize;
    for (i, (row, truth)) in preds.scores().iter().zip(truth_sets).enumerate() {
        if truth.is_empty() {
            return Err(MetricsError::EmptyTruthSet { index: i });
        }
        if truth.contains(argmax(row)) {
            correct += 1;
        }
    }
    Ok(correct as f64 / preds.len() as f64)
}

fn f1_of_sets(pred: &LabelSet, truth: &LabelSet) -> f64 {
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let tp = pred.intersection_count(truth);
    let fp = pred.len() - tp;
    let fn_ = truth.len() - tp;
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_ as f64)
}

/// Per-example F1 averaged over examples.
pub fn example_f1(preds: &PredictionSet, truth_sets: &[LabelSet]) -> Result<f64> {
    check_lengths(preds, truth_sets)?;
    let total: f64 = preds.sets().iter().zip(truth_sets).map(|(p, t)| f1_of_sets(p, t)).sum();
    Ok(total / preds.len() as f64)
}

/// Per-example F1 with prediction sets rebuilt at `threshold`.
pub fn f1_at(preds: &PredictionSet, truth_sets: &[LabelSet], threshold: f64) -> Result<f64> {
    f1_at_with(preds, truth_sets, threshold, false)
}

/// As [`f1_at`], optionally forcing the argmax into every rebuilt set (the
/// convention under which a single-label predictor scores its singleton
/// instead of an empty set).
pub fn f1_at_with(
    preds: &PredictionSet,
    truth_sets: &[LabelSet],
    threshold: f64,
    force_top1: bool,
) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::BadThreshold { value: threshold });
    }
    check_lengths(preds, truth_sets)?;
    let sets = sets_at(preds.scores(), threshold, force_top1);
    let total: f64 = sets.iter().zip(truth_sets).map(|(p, t)| f1_of_sets(p, t)).sum();
    Ok(total / preds.len() as f64)
}

/// Mean number of predicted labels per sample.
pub fn label_coverage(preds: &PredictionSet) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.sets().iter().map(LabelSet::len).sum::<usize>() as f64 / preds.len() as f64
}

fn jaccard_of_sets(pred: &LabelSet, truth: &LabelSet) -> f64 {
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    pred.intersection_count(truth) as f64 / pred.union_count(truth) as f64
}

/// Mean intersection-over-union; two empty sets count as similarity 1.
pub fn jaccard_similarity(preds: &PredictionSet, truth_sets: &[LabelSet]) -> Result<f64> {
    check_lengths(preds, truth_sets)?;
    let total: f64 = preds.sets().iter().zip(truth_sets).map(|(p, t)| jaccard_of_sets(p, t)).sum();
    Ok(total / preds.len() as f64)
}

fn pw_jaccard_of_sets(pred: &LabelSet, truth: &LabelSet) -> f64 {
    // an empty prediction contributes 0
    if pred.is_empty() {
        return 0.0;
    }
    let tp = pred.intersection_count(truth) as f64;
    let precision = tp / pred.len() as f64;
    let union = pred.union_count(truth) as f64;
    (tp / union) * precision
}

/// Jaccard similarity weighted by prediction precision, averaged over
/// samples.
pub fn precision_weighted_jaccard(preds: &PredictionSet, truth_sets: &[LabelSet]) -> Result<f64> {
    check_lengths(preds, truth_sets)?;
    let total: f64 =
        preds.sets().iter().zip(truth_sets).map(|(p, t)| pw_jaccard_of_sets(p, t)).sum();
    Ok(total / preds.len() as f64)
}

/// Per-class mean of the precision-weighted Jaccard restricted to samples
/// whose truth set contains the class; classes with no samples are skipped.
pub fn mean_pw_jaccard(preds: &PredictionSet, truth_sets: &[LabelSet]) -> Result<f64> {
    check_lengths(preds, truth_sets)?;
    let class_count = preds.scores().first().map_or(0, Vec::len);
    let mut class_means = Vec::new();
    for c in 0..class_count {
        let vals: Vec<f64> = preds
            .sets()
            .iter()
            .zip(truth_sets)
            .filter(|(_, t)| t.contains(c))
            .map(|(p, t)| pw_jaccard_of_sets(p, t))
            .collect();
        if !vals.is_empty() {
            class_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    if class_means.is_empty() {
        return Ok(0.0);
    }
    Ok(class_means.iter().sum::<f64>() / class_means.len() as f64)
}

/// Mean average precision over alternative labels: per sample the truth set
/// minus its original single label; samples with nothing left are excluded.
/// AP per class is the mean of precision-at-rank over its positives under
/// the score ranking (ties broken by sample index); classes without
/// positives are skipped, and having none at all is an error.
pub fn mean_average_precision_alternative(
    preds: &PredictionSet,
    truth_sets: &[LabelSet],
    original_labels: &[usize],
) -> Result<f64> {
    check_lengths(preds, truth_sets)?;
    if original_labels.len() != preds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: preds.len(),
            truths: original_labels.len(),
        });
    }
    let alt: Vec<LabelSet> = truth_sets
        .iter()
        .zip(original_labels)
        .map(|(t, &orig)| t.without(orig))
        .collect();
    let included: Vec<usize> = (0..preds.len()).filter(|&i| !alt[i].is_empty()).collect();
    let class_count = preds.scores().first().map_or(0, Vec::len);

    let mut ap_per_class = Vec::new();
    for c in 0..class_count {
        let positives = included.iter().filter(|&&i| alt[i].contains(c)).count();
        if positives == 0 {
            continue;
        }
        let mut ranked: Vec<usize> = included.clone();
        ranked.sort_by(|&a, &b| {
            preds.scores()[b][c].partial_cmp(&preds.scores()[a][c]).unwrap().then(a.cmp(&b))
        });
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank0, &i) in ranked.iter().enumerate() {
            if alt[i].contains(c) {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        ap_per_class.push(ap / positives as f64);
    }
    if ap_per_class.is_empty() {
        return Err(MetricsError::NoAlternativePositives);
    }
    Ok(ap_per_class.iter().sum::<f64>() / ap_per_class.len() as f64)
}

/// Everything the evaluation produces for one trained model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub top1_real_acc: f64,
    pub real_f1: f64,
    /// threshold (as its display string) -> F1
    pub f1_at: BTreeMap<String, f64>,
    pub label_coverage: f64,
    pub jaccard: f64,
    pub precision_weighted_jaccard: f64,
    pub mean_pw_jaccard: f64,
    pub map_alternative: Option<f64>,
    pub config_hash: u64,
    pub seed: u64,
    pub dataset: String,
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config_hash = {:#018x}", self.config_hash);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "top1_real_acc = {}", self.top1_real_acc);
        let _ = writeln!(s, "real_f1 = {}", self.real_f1);
        for (rho, v) in &self.f1_at {
            let _ = writeln!(s, "f1_at.{rho} = {v}");
        }
        let _ = writeln!(s, "label_coverage = {}", self.label_coverage);
        let _ = writeln!(s, "jaccard = {}", self.jaccard);
        let _ = writeln!(s, "precision_weighted_jaccard = {}", self.precision_weighted_jaccard);
        let _ = writeln!(s, "mean_pw_jaccard = {}", self.mean_pw_jaccard);
        if let Some(m) = self.map_alternative {
            let _ = writeln!(s, "map_alternative = {m}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<MetricsReport> {
        let mut fields: BTreeMap<String, String> = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| MetricsError::ParseError {
                line: line.to_string(),
                reason: "expected key = value".to_string(),
            })?;
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
        let parse_f64 = |key: &str| -> Result<f64> {
            fields
                .get(key)
                .ok_or_else(|| MetricsError::ParseError {
                    line: key.to_string(),
                    reason: "missing field".to_string(),
                })?
                .parse()
                .map_err(|_| MetricsError::ParseError {
                    line: key.to_string(),
                    reason: "bad float".to_string(),
                })
        };
        let mut f1_map = BTreeMap::new();
        for (k, v) in &fields {
            if let Some(rho) = k.strip_prefix("f1_at.") {
                let val = v.parse().map_err(|_| MetricsError::ParseError {
                    line: k.clone(),
                    reason: "bad float".to_string(),
                })?;
                f1_map.insert(rho.to_string(), val);
            }
        }
        let config_hash = fields
            .get("config_hash")
            .and_then(|v| v.strip_prefix("0x"))
            .and_then(|v| u64::from_str_radix(v, 16).ok())
            .ok_or_else(|| MetricsError::ParseError {
                line: "config_hash".to_string(),
                reason: "missing or bad hash".to_string(),
            })?;
        Ok(MetricsReport {
            top1_real_acc: parse_f64("top1_real_acc")?,
            real_f1: parse_f64("real_f1")?,
            f1_at: f1_map,
            label_coverage: parse_f64("label_coverage")?,
            jaccard: parse_f64("jaccard")?,
            precision_weighted_jaccard: parse_f64("precision_weighted_jaccard")?,
            mean_pw_jaccard: parse_f64("mean_pw_jaccard")?,
            map_alternative: fields.get("map_alternative").map(|v| v.parse().unwrap_or(f64::NAN)),
            config_hash,
            seed: parse_f64("seed")? as u64,
            dataset: fields.get("dataset").cloned().unwrap_or_default(),
        })
    }
}

/// Evaluation settings for a full report.
#[derive(Clone, Debug)]
pub struct EvalSettings {
    pub eval: EvalConfig,
    /// thresholds reported as `f1_at.<rho>`
    pub f1_thresholds: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { eval: EvalConfig::default(), f1_thresholds: vec![0.25, 0.5] }
    }
}

/// Runs the model on the dataset and fills a report; provenance fields are
/// the caller's.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    ds: &LabeledDataset<T>,
    settings: &EvalSettings,
    config_hash: u64,
    seed: u64,
    dataset_tag: &str,
) -> std::result::Result<MetricsReport, Box<dyn std::error::Error>> {
    let preds = predict(net, ds, &settings.eval)?;
    let truth = ds.truth_sets();
    let mut f1_map = BTreeMap::new();
    for &rho in &settings.f1_thresholds {
        f1_map.insert(format!("{rho}"), f1_at_with(&preds, &truth, rho, settings.eval.force_top1)?);
    }
    let original: Vec<usize> = ds.targets.iter().map(|t| t.single_class()).collect();
    let map_alternative = match mean_average_precision_alternative(&preds, &truth, &original) {
        Ok(v) => Some(v),
        Err(MetricsError::NoAlternativePositives) => None,
        Err(e) => return Err(Box::new(e)),
    };
    Ok(MetricsReport {
        top1_real_acc: top1_real_accuracy(&preds, &truth)?,
        real_f1: example_f1(&preds, &truth)?,
        f1_at: f1_map,
        label_coverage: label_coverage(&preds),
        jaccard: jaccard_similarity(&preds, &truth)?,
        precision_weighted_jaccard: precision_weighted_jaccard(&preds, &truth)?,
        mean_pw_jaccard: mean_pw_jaccard(&preds, &truth)?,
        map_alternative,
        config_hash,
        seed,
        dataset: dataset_tag.to_string(),
    })
}
