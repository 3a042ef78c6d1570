//! Training schedules.
//!
//! Three ways to spend the same budget of backward passes:
//!
//! * [`run_baseline`] - every pass on ground-truth one-hot labels, with a
//!   softmax (cross-entropy) or sigmoid (binary cross-entropy) head.
//! * [`run_mile`] - alternating short teacher/student generations. The
//!   teacher trains on ground truth for `teacher_steps`; the student then
//!   imitates the teacher's thresholded multi-label predictions for
//!   `student_steps`; the student seeds the next teacher. The per-generation
//!   caps are the learning bottleneck: neither model gets to fit its targets
//!   fully, which filters the single-label bias out of the transmitted
//!   labels.
//! * [`run_noisy_student_schedule`] - the same budget in three long phases,
//!   regenerating pseudo-labels only at the two phase boundaries.
//!
//! Budget accounting is exact: a run performs precisely `total_budget`
//! backward passes regardless of schedule, so paired comparisons isolate the
//! schedule itself.

mod log;
mod sampler;

pub use log::{GenerationSummary, LogRecord, Phase, TrainLog};
pub use sampler::BatchSampler;

use std::fmt;

use crate::data::LabeledDataset;
use crate::nets::{BuildError, HeadKind, ModelSpec, Network};
use crate::optim::{OptimError, SgdMomentum};
use crate::rng::{stream_rng, streams};
use crate::scalar::Scalar;
use crate::tensor::{with_no_grad, Tensor, TensorError, TensorResult};

#[derive(Debug)]
pub enum ScheduleError {
    Config { reason: String },
    Tensor(TensorError),
    Optim(OptimError),
    Build(BuildError),
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleError::Config { reason } => write!(f, "bad schedule config: {reason}"),
            ScheduleError::Tensor(e) => write!(f, "{e}"),
            ScheduleError::Optim(e) => write!(f, "{e}"),
            ScheduleError::Build(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ScheduleError {}

impl From<TensorError> for ScheduleError {
    fn from(e: TensorError) -> Self {
        ScheduleError::Tensor(e)
    }
}

impl From<OptimError> for ScheduleError {
    fn from(e: OptimError) -> Self {
        ScheduleError::Optim(e)
    }
}

impl From<BuildError> for ScheduleError {
    fn from(e: BuildError) -> Self {
        ScheduleError::Build(e)
    }
}

type Result<T> = std::result::Result<T, ScheduleError>;

/// Schedule hyperparameters. `teacher_steps`/`student_steps` are the
/// per-generation update caps; `total_budget` counts backward passes across
/// the whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct MileConfig<T: Scalar> {
    pub teacher_steps: usize,
    pub student_steps: usize,
    /// pseudo-label threshold in (0,1)
    pub threshold: T,
    pub total_budget: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    pub momentum: T,
    /// L2 pull toward zero applied inside the optimizer step (0 disables)
    pub weight_decay: T,
    pub seed: u64,
    /// replace empty pseudo-label rows with the teacher's argmax singleton
    pub argmax_fallback: bool,
}

impl<T: Scalar> Default for MileConfig<T> {
    fn default() -> Self {
        MileConfig {
            teacher_steps: 600,
            student_steps: 400,
            threshold: T::from_f64(0.25),
            total_budget: 20_000,
            batch_size: 128,
            learning_rate: T::from_f64(0.05),
            momentum: T::from_f64(0.9),
            weight_decay: T::zero(),
            seed: 0,
            argmax_fallback: false,
        }
    }
}

impl<T: Scalar> MileConfig<T> {
    /// Invariants shared by every schedule.
    pub fn validate_common(&self) -> Result<()> {
        let fail = |reason: String| Err(ScheduleError::Config { reason });
        if self.threshold <= T::zero() || self.threshold >= T::one() {
            return fail(format!("threshold {} must lie strictly in (0,1)", self.threshold));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= T::zero() && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        if self.momentum < T::zero() || self.momentum >= T::one() {
            return fail(format!("momentum {} must lie in [0,1)", self.momentum));
        }
        if self.weight_decay < T::zero() || !self.weight_decay.is_finite() {
            return fail(format!("weight decay {} must be finite and >= 0", self.weight_decay));
        }
        Ok(())
    }

    /// Full invariants for the iterated schedule.
    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        let fail = |reason: String| Err(ScheduleError::Config { reason });
        if self.teacher_steps == 0 {
            return fail("teacher_steps must be >= 1".into());
        }
        if self.student_steps == 0 {
            return fail("student_steps must be >= 1".into());
        }
        if self.teacher_steps + self.student_steps > self.total_budget {
            return fail(format!(
                "one generation needs {} steps but the budget is {}",
                self.teacher_steps + self.student_steps,
                self.total_budget
            ));
        }
        Ok(())
    }
}

/// Mutable state of one iterated-learning run.
pub struct MileState<T: Scalar> {
    pub generation: usize,
    pub teacher: Network<T>,
    pub student: Network<T>,
    pub teacher_steps_done: usize,
    pub student_steps_done: usize,
}

impl<T: Scalar> MileState<T> {
    pub fn new(
        model_spec: &ModelSpec,
        class_count: usize,
        cfg: &MileConfig<T>,
    ) -> Result<MileState<T>> {
        let mut rng = stream_rng(cfg.seed, streams::PARAM_INIT, 0);
        let student = model_spec.build(class_count, HeadKind::Sigmoid, &mut rng)?;
        let teacher = student.clone_parameters();
        Ok(MileState { generation: 0, teacher, student, teacher_steps_done: 0, student_steps_done: 0 })
    }

    pub fn steps_done(&self) -> usize {
        self.teacher_steps_done + self.student_steps_done
    }

    pub fn remaining(&self, cfg: &MileConfig<T>) -> usize {
        cfg.total_budget.saturating_sub(self.steps_done())
    }

    /// The generation copy: the current student's parameters become the next
    /// teacher.
    pub fn copy_student_to_teacher(&mut self) {
        self.teacher.copy_parameters_from(&self.student);
    }
}

/// Binary cross-entropy of logits against 0/1 targets (flat `[B*C]`),
/// summed over classes and normalized by the batch dimension only.
pub fn bce_loss<T: Scalar>(logits: &Tensor<T>, targets: &[T]) -> TensorResult<Tensor<T>> {
    logits.bce_with_logits(targets)
}

/// Softmax cross-entropy of logits against class indices, mean over batch.
pub fn ce_loss<T: Scalar>(logits: &Tensor<T>, target_indices: &[usize]) -> TensorResult<Tensor<T>> {
    logits.cross_entropy(target_indices)
}

/// Thresholds per-class probabilities into 0/1 pseudo-labels: bit j set iff
/// `probs[j] > threshold`. With `argmax_fallback`, an all-zero row is
/// replaced by the argmax singleton.
pub fn pseudo_labels_from_probs<T: Scalar>(
    probs: &[T],
    class_count: usize,
    threshold: T,
    argmax_fallback: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); probs.len()];
    for (row_out, row_in) in out.chunks_mut(class_count).zip(probs.chunks(class_count)) {
        let mut any = false;
        for (o, &p) in row_out.iter_mut().zip(row_in) {
            if p > threshold {
                *o = T::one();
                any = true;
            }
        }
        if !any && argmax_fallback {
            let mut best = 0usize;
            for (j, &p) in row_in.iter().enumerate() {
                if p > row_in[best] {
                    best = j;
                }
            }
            row_out[best] = T::one();
        }
    }
    out
}

/// Runs the teacher in inference mode on a batch and thresholds its sigmoid
/// outputs. No gradient flows into the teacher.
pub fn make_pseudo_labels<T: Scalar>(
    teacher: &Network<T>,
    batch: &Tensor<T>,
    threshold: T,
    argmax_fallback: bool,
) -> TensorResult<Vec<T>> {
    let probs = with_no_grad(|| teacher.forward(batch).map(|l| l.sigmoid()))?;
    let bits = pseudo_labels_from_probs(&probs.data(), teacher.num_classes, threshold, argmax_fallback);
    Ok(bits)
}

fn mean_positive<T: Scalar>(targets: &[T], batch: usize) -> f64 {
    targets.iter().map(|v| v.as_f64()).sum::<f64>() / batch as f64
}

/// One ground-truth training phase for the teacher: at most `teacher_steps`
/// BCE updates, truncated by the remaining budget. Returns the number of
/// steps actually run (0 signals an exhausted budget).
pub fn run_teacher_phase<T: Scalar>(
    state: &mut MileState<T>,
    data: &LabeledDataset<T>,
    cfg: &MileConfig<T>,
    sampler: &mut BatchSampler,
    train_log: &mut TrainLog,
) -> Result<usize> {
    let steps = cfg.teacher_steps.min(state.remaining(cfg));
    let params = state.teacher.parameters();
    let mut opt = SgdMomentum::with_weight_decay(cfg.learning_rate, cfg.momentum, cfg.weight_decay, &params)?;
    for _ in 0..steps {
        let indices = sampler.next_batch();
        let x = data.batch_images(&indices);
        let targets = data.batch_targets(&indices);
        let logits = state.teacher.forward(&x)?;
        let loss = bce_loss(&logits, &targets)?;
        loss.backward()?;
        opt.step(&params)?;
        train_log.push(LogRecord {
            step: state.steps_done(),
            phase: Phase::Teacher,
            generation: state.generation + 1,
            loss: loss.item().as_f64(),
            mean_positive_labels: mean_positive(&targets, indices.len()),
        });
        state.teacher_steps_done += 1;
    }
    Ok(steps)
}

/// One imitation phase: at most `student_steps` BCE updates of the student
/// against pseudo-labels recomputed per batch from the frozen teacher.
pub fn run_student_phase<T: Scalar>(
    state: &mut MileState<T>,
    data: &LabeledDataset<T>,
    cfg: &MileConfig<T>,
    sampler: &mut BatchSampler,
    train_log: &mut TrainLog,
) -> Result<usize> {
    let steps = cfg.student_steps.min(state.remaining(cfg));
    let params = state.student.parameters();
    let mut opt = SgdMomentum::with_weight_decay(cfg.learning_rate, cfg.momentum, cfg.weight_decay, &params)?;
    for _ in 0..steps {
        let indices = sampler.next_batch();
        let x = data.batch_images(&indices);
        let pseudo = make_pseudo_labels(&state.teacher, &x, cfg.threshold, cfg.argmax_fallback)?;
        let logits = state.student.forward(&x)?;
        let loss = bce_loss(&logits, &pseudo)?;
        loss.backward()?;
        opt.step(&params)?;
        train_log.push(LogRecord {
            step: state.steps_done(),
            phase: Phase::Student,
            generation: state.generation + 1,
            loss: loss.item().as_f64(),
            mean_positive_labels: mean_positive(&pseudo, indices.len()),
        });
        state.student_steps_done += 1;
    }
    Ok(steps)
}

/// The full iterated schedule. Each generation copies the student into the
/// teacher, runs the teacher phase on ground truth, then the student phase on
/// the teacher's pseudo-labels, until `total_budget` backward passes are
/// spent. A final partial generation spends what remains teacher-first; the
/// returned network is always the student.
pub fn run_mile<T: Scalar>(
    model_spec: &ModelSpec,
    data: &LabeledDataset<T>,
    cfg: &MileConfig<T>,
) -> Result<(Network<T>, TrainLog)> {
    cfg.validate()?;
    let mut state = MileState::new(model_spec, data.class_count, cfg)?;
    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut train_log = TrainLog::new();
    while state.remaining(cfg) > 0 {
        state.copy_student_to_teacher();
        run_teacher_phase(&mut state, data, cfg, &mut sampler, &mut train_log)?;
        run_student_phase(&mut state, data, cfg, &mut sampler, &mut train_log)?;
        state.generation += 1;
    }
    Ok((state.student, train_log))
}

/// Standard supervised training on ground truth for the full budget, with
/// the loss picked by the head.
pub fn run_baseline<T: Scalar>(
    model_spec: &ModelSpec,
    data: &LabeledDataset<T>,
    cfg: &MileConfig<T>,
    head: HeadKind,
) -> Result<(Network<T>, TrainLog)> {
    cfg.validate_common()?;
    let mut rng = stream_rng(cfg.seed, streams::PARAM_INIT, 0);
    let net = model_spec.build(data.class_count, head, &mut rng)?;
    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut train_log = TrainLog::new();
    let params = net.parameters();
    let mut opt = SgdMomentum::with_weight_decay(cfg.learning_rate, cfg.momentum, cfg.weight_decay, &params)?;
    for step in 0..cfg.total_budget {
        let indices = sampler.next_batch();
        let x = data.batch_images(&indices);
        let logits = net.forward(&x)?;
        let loss = match head {
            HeadKind::Softmax => ce_loss(&logits, &data.batch_target_indices(&indices))?,
            HeadKind::Sigmoid => bce_loss(&logits, &data.batch_targets(&indices))?,
        };
        loss.backward()?;
        opt.step(&params)?;
        train_log.push(LogRecord {
            step,
            phase: Phase::Baseline,
            generation: 0,
            loss: loss.item().as_f64(),
            mean_positive_labels: 1.0,
        });
    }
    Ok((net, train_log))
}

/// Noisy-student style schedule at matched budget: three sequential phases.
/// Phase 1 trains on ground truth; phases 2 and 3 continue from the previous
/// phase's weights on pseudo-labels produced by that phase's frozen final
/// model. Pseudo-labels are regenerated exactly twice.
pub fn run_noisy_student_schedule<T: Scalar>(
    model_spec: &ModelSpec,
    data: &LabeledDataset<T>,
    cfg: &MileConfig<T>,
) -> Result<(Network<T>, TrainLog)> {
    cfg.validate_common()?;
    let phase1 = cfg.total_budget.div_ceil(3);
    let phase2 = phase1.min(cfg.total_budget - phase1);
    let phase3 = cfg.total_budget - phase1 - phase2;

    let mut rng = stream_rng(cfg.seed, streams::PARAM_INIT, 0);
    let net = model_spec.build(data.class_count, HeadKind::Sigmoid, &mut rng)?;
    let mut sampler = BatchSampler::new(data.n, cfg.batch_size, cfg.seed);
    let mut train_log = TrainLog::new();
    let mut step = 0usize;

    let mut run_phase = |phase_idx: u8,
                         steps: usize,
                         teacher: Option<&Network<T>>,
                         train_log: &mut TrainLog|
     -> Result<()> {
        let params = net.parameters();
        let mut opt = SgdMomentum::with_weight_decay(cfg.learning_rate, cfg.momentum, cfg.weight_decay, &params)?;
        for _ in 0..steps {
            let indices = sampler.next_batch();
            let x = data.batch_images(&indices);
            let targets = match teacher {
                None => data.batch_targets(&indices),
                Some(t) => make_pseudo_labels(t, &x, cfg.threshold, cfg.argmax_fallback)?,
            };
            let logits = net.forward(&x)?;
            let loss = bce_loss(&logits, &targets)?;
            loss.backward()?;
            opt.step(&params)?;
            train_log.push(LogRecord {
                step,
                phase: Phase::NsPhase(phase_idx),
                generation: phase_idx as usize,
                loss: loss.item().as_f64(),
                mean_positive_labels: mean_positive(&targets, indices.len()),
            });
            step += 1;
        }
        Ok(())
    };

    run_phase(1, phase1, None, &mut train_log)?;
    let teacher1 = net.clone_parameters();
    train_log.pseudo_label_regens += 1;
    run_phase(2, phase2, Some(&teacher1), &mut train_log)?;
    let teacher2 = net.clone_parameters();
    train_log.pseudo_label_regens += 1;
    run_phase(3, phase3, Some(&teacher2), &mut train_log)?;

    Ok((net, train_log))
}

#[cfg(test)]
mod tests;
