//! Per-step training records, serialized as tab-separated lines.

use std::fmt;
use std::io::{BufRead, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Teacher,
    Student,
    Baseline,
    NsPhase(u8),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Teacher => write!(f, "teacher"),
            Phase::Student => write!(f, "student"),
            Phase::Baseline => write!(f, "baseline"),
            Phase::NsPhase(k) => write!(f, "ns-phase-{k}"),
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "teacher" => Ok(Phase::Teacher),
            "student" => Ok(Phase::Student),
            "baseline" => Ok(Phase::Baseline),
            other => other
                .strip_prefix("ns-phase-")
                .and_then(|k| k.parse::<u8>().ok())
                .map(Phase::NsPhase)
                .ok_or_else(|| format!("unknown phase {other:?}")),
        }
    }
}

/// One backward pass: which phase ran it, in which generation, at what loss,
/// and how many positive labels the batch targets carried per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub phase: Phase,
    pub generation: usize,
    pub loss: f64,
    pub mean_positive_labels: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub teacher_steps: usize,
    pub student_steps: usize,
    pub baseline_steps: usize,
    /// pseudo-label source switches (noisy-student schedule)
    pub pseudo_label_regens: usize,
}

/// Per-generation aggregates of a MILe log.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSummary {
    pub generation: usize,
    pub mean_teacher_loss: Option<f64>,
    pub mean_student_loss: Option<f64>,
    /// mean pseudo-label count per sample over the student phase
    pub mean_pseudo_labels: Option<f64>,
}

impl TrainLog {
    pub fn new() -> Self {
        TrainLog::default()
    }

    pub fn push(&mut self, record: LogRecord) {
        match record.phase {
            Phase::Teacher => self.teacher_steps += 1,
            Phase::Student => self.student_steps += 1,
            Phase::Baseline | Phase::NsPhase(_) => self.baseline_steps += 1,
        }
        self.records.push(record);
    }

    pub fn total_backward_passes(&self) -> usize {
        self.teacher_steps + self.student_steps + self.baseline_steps
    }

    pub fn generation_summaries(&self) -> Vec<GenerationSummary> {
        let max_gen = self.records.iter().map(|r| r.generation).max().unwrap_or(0);
        (1..=max_gen)
            .map(|g| {
                let mean = |phase: Phase, field: fn(&LogRecord) -> f64| -> Option<f64> {
                    let vals: Vec<f64> = self
                        .records
                        .iter()
                        .filter(|r| r.generation == g && r.phase == phase)
                        .map(field)
                        .collect();
                    if vals.is_empty() {
                        None
                    } else {
                        Some(vals.iter().sum::<f64>() / vals.len() as f64)
                    }
                };
                GenerationSummary {
                    generation: g,
                    mean_teacher_loss: mean(Phase::Teacher, |r| r.loss),
                    mean_student_loss: mean(Phase::Student, |r| r.loss),
                    mean_pseudo_labels: mean(Phase::Student, |r| r.mean_positive_labels),
                }
            })
            .collect()
    }

    pub fn write_tsv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step\tphase\tgeneration\tloss\tmean_positive_labels")?;
        for r in &self.records {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", r.step, r.phase, r.generation, r.loss, r.mean_positive_labels)?;
        }
        Ok(())
    }

    pub fn read_tsv(r: &mut impl BufRead) -> std::io::Result<Self> {
        let bad = |line: &str, why: &str| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{why}: {line:?}"))
        };
        let mut log = TrainLog::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(bad(&line, "expected 5 tab-separated fields"));
            }
            let record = LogRecord {
                step: fields[0].parse().map_err(|_| bad(&line, "bad step"))?,
                phase: fields[1].parse().map_err(|_| bad(&line, "bad phase"))?,
                generation: fields[2].parse().map_err(|_| bad(&line, "bad generation"))?,
                loss: fields[3].parse().map_err(|_| bad(&line, "bad loss"))?,
                mean_positive_labels: fields[4].parse().map_err(|_| bad(&line, "bad label count"))?,
            };
            log.push(record);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_roundtrip_is_exact() {
        let mut log = TrainLog::new();
        log.push(LogRecord {
            step: 0,
            phase: Phase::Teacher,
            generation: 1,
            loss: 0.693_147_180_559_945_3,
            mean_positive_labels: 1.0,
        });
        log.push(LogRecord {
            step: 1,
            phase: Phase::Student,
            generation: 1,
            loss: 1.25e-7,
            mean_positive_labels: 2.5,
        });
        log.push(LogRecord {
            step: 2,
            phase: Phase::NsPhase(2),
            generation: 2,
            loss: 3.0,
            mean_positive_labels: 1.0,
        });
        let mut buf = Vec::new();
        log.write_tsv(&mut buf).unwrap();
        let back = TrainLog::read_tsv(&mut buf.as_slice()).unwrap();
        assert_eq!(log.records, back.records);
        assert_eq!(back.teacher_steps, 1);
        assert_eq!(back.student_steps, 1);
        assert_eq!(back.baseline_steps, 1);
    }

    #[test]
    fn generation_summaries_group_by_phase() {
        let mut log = TrainLog::new();
        for (step, gen, phase, loss, labels) in [
            (0, 1, Phase::Teacher, 1.0, 1.0),
            (1, 1, Phase::Teacher, 0.5, 1.0),
            (2, 1, Phase::Student, 2.0, 3.0),
            (3, 2, Phase::Teacher, 0.25, 1.0),
        ] {
            log.push(LogRecord { step, phase, generation: gen, loss, mean_positive_labels: labels });
        }
        let s = log.generation_summaries();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mean_teacher_loss, Some(0.75));
        assert_eq!(s[0].mean_student_loss, Some(2.0));
        assert_eq!(s[0].mean_pseudo_labels, Some(3.0));
        assert_eq!(s[1].mean_student_loss, None);
    }
}
