//! The incremental training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{apply_alignment, AlignmentConfig, AlignmentMode};
use crate::data::{epoch_batches, DatasetSplit, LabeledExample, ReplayBuffer, Selection};
use crate::error::{Error, Result};
use crate::losses::{Aggregation, KdKind, KdSupport};
use crate::metrics::{self, ForgettingVariant, RunReport, StepMetrics, REPORT_FORMAT};
use crate::model::{backward, AuxHead, AuxTerm, ClassifierModel, HeadInit, KdTerm, Objective, Sgd, TeacherSnapshot};
use crate::rng::{self, derive_seed};
use crate::schedule::{validate_schedule, IncrementSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Replay,
    KdReplay,
    WaKd,
    AuxExpand,
}

impl PresetName {
    pub const ALL: [PresetName; 4] = [PresetName::Replay, PresetName::KdReplay, PresetName::WaKd, PresetName::AuxExpand];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Replay => "replay",
            PresetName::KdReplay => "kd_replay",
            PresetName::WaKd => "wa_kd",
            PresetName::AuxExpand => "aux_expand",
        }
    }
}

impl std::fmt::Display for PresetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdMode {
    Off,
    Vanilla,
    ReplayOnly,
    CwmNoReplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    Off,
    InstanceMean,
    Cwm,
}

/// A bundle of training mechanisms.
///
/// | preset     | main | kd      | aux           | alignment |
/// |------------|------|---------|---------------|-----------|
/// | replay     | IM   | off     | off           | none      |
/// | kd_replay  | IM   | vanilla | off           | none      |
/// | wa_kd      | IM   | vanilla | off           | wa        |
/// | aux_expand | IM   | off     | instance_mean | none      |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodPreset {
    pub name: PresetName,
    pub main_loss: Aggregation,
    pub kd: KdMode,
    pub kd_coeff: f64,
    pub temperature: f64,
    pub kd_support: KdSupport,
    pub aux: AuxMode,
    pub aux_coeff: f64,
    pub alignment: AlignmentConfig,
    pub normalize_surrogates: bool,
}

impl MethodPreset {
    pub fn new(name: PresetName) -> Self {
        let mut p = MethodPreset {
            name,
            main_loss: Aggregation::InstanceMean,
            kd: KdMode::Off,
            kd_coeff: 1.0,
            temperature: 2.0,
            kd_support: KdSupport::Renormalized,
            aux: AuxMode::Off,
            aux_coeff: 1.0,
            alignment: AlignmentConfig::default(),
            normalize_surrogates: false,
        };
        match name {
            PresetName::Replay => {}
            PresetName::KdReplay => p.kd = KdMode::Vanilla,
            PresetName::WaKd => {
                p.kd = KdMode::Vanilla;
                p.alignment.mode = AlignmentMode::Wa;
            }
            PresetName::AuxExpand => p.aux = AuxMode::InstanceMean,
        }
        p
    }

    /// Swaps in the free-flow strategies: class-wise mean CE, replay-only
    /// KD (class-wise mean KD when there is no replay), class-wise mean
    /// auxiliary CE, dynamic alignment and surrogate normalization.
    pub fn free_flow(mut self, has_replay: bool) -> Self {
        self.main_loss = Aggregation::ClassWiseMean;
        if self.kd != KdMode::Off {
            self.kd = if has_replay { KdMode::ReplayOnly } else { KdMode::CwmNoReplay };
        }
        if self.aux != AuxMode::Off {
            self.aux = AuxMode::Cwm;
        }
        if self.alignment.mode != AlignmentMode::None || self.kd != KdMode::Off {
            self.alignment.mode = AlignmentMode::Diwa;
        }
        self.normalize_surrogates = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kd_coeff", self.kd_coeff), ("aux_coeff", self.aux_coeff)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {}", self.temperature)));
        }
        self.alignment.validate()
    }

    fn kd_term(&self) -> Option<KdTerm> {
        let kind = match self.kd {
            KdMode::Off => return None,
            KdMode::Vanilla => KdKind::Vanilla,
            KdMode::ReplayOnly => KdKind::ReplayOnly,
            KdMode::CwmNoReplay => KdKind::ClassWiseMean,
        };
        Some(KdTerm { kind, coeff: self.kd_coeff, temperature: self.temperature, support: self.kd_support })
    }

    fn aux_term(&self) -> Option<AuxTerm> {
        let aggregation = match self.aux {
            AuxMode::Off => return None,
            AuxMode::InstanceMean => Aggregation::InstanceMean,
            AuxMode::Cwm => Aggregation::ClassWiseMean,
        };
        Some(AuxTerm { aggregation, coeff: self.aux_coeff })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Total exemplar budget; 0 disables replay.
    pub buffer_budget: usize,
    pub selection: Selection,
    /// Width of the tanh hidden layer; 0 gives a linear classifier.
    pub hidden_width: usize,
    pub head_init: HeadInit,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            buffer_budget: 60,
            selection: Selection::Herding,
            hidden_width: 32,
            head_init: HeadInit::SmallUniform,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Sgd::new(self.lr, self.momentum, self.weight_decay).map(|_| ())
    }
}

/// Hooks into the training loop, for inspection and testing.
pub trait RunObserver {
    fn step_start(&mut self, _step: usize, _model: &ClassifierModel, _teacher: Option<&TeacherSnapshot>) {}
    fn step_end(&mut self, _step: usize, _model: &ClassifierModel, _buffer: Option<&ReplayBuffer>) {}
}

impl RunObserver for () {}

/// Accuracy, confusion matrix and per-task accuracies of `model` on `test`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub task_accuracies: Vec<f64>,
}

/// Evaluates on `test` (labels in arrival order). `task_sizes` groups the
/// model's classes into consecutive tasks; pass `&[num_classes]` for a
/// single group.
pub fn evaluate(model: &ClassifierModel, test: &[&LabeledExample], task_sizes: &[usize]) -> Result<Evaluation> {
    let c = model.num_classes();
    if task_sizes.iter().sum::<usize>() != c {
        return Err(Error::InvalidArgument(format!("task sizes do not add up to {c} classes")));
    }
    if let Some(e) = test.iter().find(|e| e.label >= c) {
        return Err(Error::LabelOutOfRange { label: e.label, classes: c });
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let predictions = model.predict(test)?;
    let mut confusion = vec![vec![0usize; c]; c];
    for (e, &p) in test.iter().zip(&predictions) {
        confusion[e.label][p] += 1;
    }
    let mut task_accuracies = Vec::with_capacity(task_sizes.len());
    let mut start = 0;
    for &n in task_sizes {
        let rows = &confusion[start..start + n];
        let total: usize = rows.iter().flatten().sum();
        let correct: usize = rows.iter().enumerate().map(|(i, r)| r[start + i]).sum();
        task_accuracies.push(if total == 0 { 0.0 } else { correct as f64 / total as f64 });
        start += n;
    }
    Ok(Evaluation { accuracy: metrics::accuracy_from_confusion(&confusion), confusion, task_accuracies })
}

/// Runs every step of `schedule` on `data` and reports metrics after each.
pub fn run_incremental(
    schedule: &IncrementSchedule,
    data: &DatasetSplit,
    preset: &MethodPreset,
    config: &TrainConfig,
) -> Result<RunReport> {
    run_incremental_observed(schedule, data, preset, config, &mut ())
}

pub fn run_incremental_observed(
    schedule: &IncrementSchedule,
    data: &DatasetSplit,
    preset: &MethodPreset,
    config: &TrainConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunReport> {
    validate_schedule(schedule, schedule.total()).map_err(|v| Error::InvalidSchedule(v.to_string()))?;
    preset.validate()?;
    config.validate()?;
    let steps = schedule.num_steps();
    if data.train.len() != steps || data.test.len() != steps {
        return Err(Error::InvalidArgument(format!(
            "dataset split has {} steps, schedule has {steps}",
            data.train.len()
        )));
    }

    // Internal labels follow arrival order so that old classes always occupy
    // the leading head rows.
    let order = schedule.arrival_order();
    let max_label = order.iter().copied().max().unwrap_or(0);
    let mut internal = vec![usize::MAX; max_label + 1];
    for (i, &c) in order.iter().enumerate() {
        internal[c] = i;
    }
    let remap = |set: &[LabeledExample]| -> Result<Vec<LabeledExample>> {
        set.iter()
            .map(|e| match internal.get(e.label) {
                Some(&i) if i != usize::MAX => Ok(LabeledExample::new(e.features.clone(), i)),
                _ => Err(Error::InvalidArgument(format!("label {} is not in the schedule", e.label))),
            })
            .collect()
    };
    let train: Vec<Vec<LabeledExample>> = data.train.iter().map(|s| remap(s)).collect::<Result<_>>()?;
    let test: Vec<Vec<LabeledExample>> = data.test.iter().map(|s| remap(s)).collect::<Result<_>>()?;

    let seed = config.seed;
    let mut model = ClassifierModel::new(data.dim, config.hidden_width, derive_seed(seed, "model/init", &[]));
    let mut buffer = match config.buffer_budget {
        0 => None,
        b => Some(ReplayBuffer::new(b, config.selection, derive_seed(seed, "buffer", &[]))?),
    };
    let mut step_metrics = Vec::with_capacity(steps);
    let mut wall_ms = Vec::with_capacity(steps);

    for t in 0..steps {
        let started = Instant::now();
        let result = run_step(t, schedule, &train[t], &test[..=t], preset, config, &mut model, &mut buffer, observer);
        let m = result.map_err(|e| e.at_step(t))?;
        wall_ms.push(started.elapsed().as_secs_f64() * 1e3);
        step_metrics.push(m);
    }

    let acc = step_metrics.iter().map(|s| s.task_accuracies.clone()).collect::<Vec<_>>();
    let last = step_metrics.last().expect("schedule has at least one step");
    let forgetting = (steps >= 2).then(|| metrics::average_forgetting(&acc, ForgettingVariant::MaxOverHistory)).transpose()?;
    let forgetting_first_seen =
        (steps >= 2).then(|| metrics::average_forgetting(&acc, ForgettingVariant::FirstSeen)).transpose()?;
    Ok(RunReport {
        format: REPORT_FORMAT.to_string(),
        config: None,
        protocol: String::new(),
        seed,
        schedule_kind: String::new(),
        schedule: schedule.to_text(),
        counts: schedule.counts.clone(),
        method: *preset,
        train: *config,
        final_accuracy: last.accuracy,
        forgetting,
        forgetting_first_seen,
        mean_step_accuracy: metrics::mean_step_accuracy(&step_metrics),
        prediction_bias: metrics::prediction_bias(&last.confusion, &schedule.counts)?,
        steps: step_metrics,
        wall_ms,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_step(
    t: usize,
    schedule: &IncrementSchedule,
    train: &[LabeledExample],
    tests: &[Vec<LabeledExample>],
    preset: &MethodPreset,
    config: &TrainConfig,
    model: &mut ClassifierModel,
    buffer: &mut Option<ReplayBuffer>,
    observer: &mut dyn RunObserver,
) -> Result<StepMetrics> {
    let seed = config.seed;
    let old = model.num_classes();
    let new = schedule.counts[t];

    let teacher = preset.kd_term().filter(|_| t > 0).map(|_| model.snapshot());
    observer.step_start(t, model, teacher.as_ref());
    model.expand_head(new, config.head_init, derive_seed(seed, "model/head", &[t as u64]))?;
    let mut aux = preset
        .aux_term()
        .map(|_| AuxHead::new(new, model.feature_dim(), config.head_init, derive_seed(seed, "model/aux", &[t as u64])));
    let objective = Objective {
        main: Some(preset.main_loss),
        kd: preset.kd_term().filter(|_| teacher.is_some()),
        aux: preset.aux_term(),
    };

    let mut sgd = Sgd::new(config.lr, config.momentum, config.weight_decay)?;
    let mut shuffle = rng::stream(seed, "train/shuffle", &[t as u64]);
    let mut final_epoch_loss = 0.0;
    for _ in 0..config.epochs {
        let batches = epoch_batches(buffer.as_ref(), train, config.batch_size, &mut shuffle);
        let mut total = 0.0;
        for batch in &batches {
            let (loss, grads) = backward(model, batch, &objective, teacher.as_ref(), aux.as_ref())?;
            sgd.step(model, aux.as_mut(), &grads)?;
            total += loss;
        }
        final_epoch_loss = total / batches.len() as f64;
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss { term: "parameters" });
    }

    let alignment_scale = if old > 0 { apply_alignment(model, old, new, &preset.alignment)? } else { 1.0 };

    if let Some(buf) = buffer.as_mut() {
        let new_classes: Vec<usize> = (old..old + new).collect();
        let frozen = &*model;
        let features = |x: &[f64]| frozen.features(x).expect("feature dimension checked during training");
        buf.update(train, &new_classes, Some(&features))?;
    }
    observer.step_end(t, model, buffer.as_ref());

    let test: Vec<&LabeledExample> = tests.iter().flatten().collect();
    let eval = evaluate(model, &test, &schedule.counts[..=t])?;
    Ok(StepMetrics {
        step: t,
        classes_seen: model.num_classes(),
        accuracy: eval.accuracy,
        task_accuracies: eval.task_accuracies,
        task_sizes: schedule.counts[..=t].to_vec(),
        confusion: eval.confusion,
        alignment_scale,
        final_epoch_loss,
    })
}
