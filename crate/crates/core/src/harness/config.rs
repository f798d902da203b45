//! Experiment configuration: a TOML document with fixed sections.
//!
//! Every field has a default, so an empty document is a valid config.
//! Parsing rejects unknown keys and type mismatches with the offending line,
//! then checks value ranges.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentConfig, AlignmentMode};
use crate::data::{make_gaussian_dataset, read_matrix, DatasetSource, Selection};
use crate::error::{Error, Result};
use crate::losses::{Aggregation, KdSupport};
use crate::model::HeadInit;
use crate::rng::derive_seed;
use crate::schedule::{ScheduleKind, ScheduleSpec};
use crate::trainer::{AuxMode, KdMode, MethodPreset, PresetName, TrainConfig};

/// Environment variable that overrides `experiment.out_dir`.
pub const OUT_DIR_ENV: &str = "FFCIL_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub method: MethodConfig,
    pub alignment: AlignmentSection,
    pub train: TrainSection,
    pub experiment: ExperimentSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Gaussian,
    Import,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub num_classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    /// Matrix files for `kind = "import"`, relative to the config file.
    pub train_path: Option<String>,
    pub test_path: Option<String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Gaussian,
            num_classes: 20,
            dim: 16,
            train_per_class: 50,
            test_per_class: 50,
            separation: 4.5,
            train_path: None,
            test_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub num_steps: usize,
    pub min_per_step: usize,
    /// Defaults to the class total.
    pub max_per_step: Option<usize>,
    /// Per-step class counts, read only when `kind = "explicit"`.
    pub counts: Vec<usize>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Explicit,
            num_steps: 4,
            min_per_step: 1,
            max_per_step: None,
            counts: vec![10, 2, 7, 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The preset as defined.
    #[default]
    Org,
    /// The preset with the free-flow strategies swapped in.
    Ours,
}

/// Preset selection plus optional per-field overrides applied on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub preset: PresetName,
    pub variant: Variant,
    pub main_loss: Option<Aggregation>,
    pub kd: Option<KdMode>,
    pub kd_coeff: Option<f64>,
    pub temperature: Option<f64>,
    pub kd_support: Option<KdSupport>,
    pub aux: Option<AuxMode>,
    pub aux_coeff: Option<f64>,
    pub normalize_surrogates: Option<bool>,
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig {
            preset: PresetName::KdReplay,
            variant: Variant::Org,
            main_loss: None,
            kd: None,
            kd_coeff: None,
            temperature: None,
            kd_support: None,
            aux: None,
            aux_coeff: None,
            normalize_surrogates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentSection {
    /// Overrides the preset's alignment mode when set.
    pub mode: Option<AlignmentMode>,
    pub eta_min: f64,
    pub tau: f64,
}

impl Default for AlignmentSection {
    fn default() -> Self {
        let d = AlignmentConfig::default();
        AlignmentSection { mode: None, eta_min: d.eta_min, tau: d.tau }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffer_budget: usize,
    pub selection: Selection,
    pub hidden_width: usize,
    pub head_init: HeadInit,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            buffer_budget: d.buffer_budget,
            selection: d.selection,
            hidden_width: d.hidden_width,
            head_init: d.head_init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub jobs: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection { seeds: vec![0], out_dir: "runs".into(), jobs: 1 }
    }
}

/// A cell of the comparison grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Equal split with the same total and step count, original preset.
    Equ,
    /// Configured schedule, original preset.
    FfOrg,
    /// Configured schedule, free-flow variant of the preset.
    FfOurs,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Equ, Protocol::FfOrg, Protocol::FfOurs];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Equ => "equ",
            Protocol::FfOrg => "ff_org",
            Protocol::FfOurs => "ff_ours",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Protocol::Equ => "Equ.T",
            Protocol::FfOrg => "FF.org",
            Protocol::FfOurs => "FF.ours",
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Protocol::FfOurs => Variant::Ours,
            _ => Variant::Org,
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown protocol `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Presets to sweep; empty means `method.preset` only.
    pub presets: Vec<PresetName>,
    pub protocols: Vec<Protocol>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { presets: Vec::new(), protocols: Protocol::ALL.to_vec() }
    }
}

/// One fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub preset: PresetName,
    pub protocol: Protocol,
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub method: MethodPreset,
    pub train: TrainConfig,
}

impl RunSpec {
    pub fn file_stem(&self) -> String {
        format!("{}__{}__seed{}", self.preset, self.protocol.as_str(), self.seed)
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let (line, key) = match e.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                let key = text.lines().nth(line - 1).map(line_key).unwrap_or_default();
                (line, key)
            }
            None => (0, String::new()),
        };
        Error::Config { line, key, message: e.message().trim().to_string() }
    })?;
    config.validate_with(text)?;
    Ok(config)
}

fn line_key(line: &str) -> String {
    let t = line.trim();
    match t.split_once('=') {
        Some((k, _)) => k.trim().to_string(),
        None => t.trim_matches(|c| c == '[' || c == ']').to_string(),
    }
}

/// Line of `key` inside `[section]`, or of the section header when the key
/// is absent (0 when both are absent).
fn locate(text: &str, section: &str, key: &str) -> usize {
    let mut current = String::new();
    let mut header = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section {
                header = i + 1;
            }
        } else if current == section && line.split_once('=').is_some_and(|(k, _)| k.trim() == key) {
            return i + 1;
        }
    }
    header
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let text = self.to_toml();
        self.validate_with(&text)
    }

    fn validate_with(&self, text: &str) -> Result<()> {
        let fail = |section: &str, key: &str, message: String| {
            Err(Error::Config { line: locate(text, section, key), key: format!("{section}.{key}"), message })
        };

        let d = &self.dataset;
        match d.kind {
            DatasetKind::Gaussian => {
                if d.num_classes == 0 {
                    return fail("dataset", "num_classes", "must be at least 1".into());
                }
                if d.dim < 2 {
                    return fail("dataset", "dim", format!("must be at least 2, got {}", d.dim));
                }
                if d.train_per_class == 0 {
                    return fail("dataset", "train_per_class", "must be at least 1".into());
                }
                if d.test_per_class == 0 {
                    return fail("dataset", "test_per_class", "must be at least 1".into());
                }
                if !(d.separation >= 0.0 && d.separation.is_finite()) {
                    return fail("dataset", "separation", format!("must be non-negative, got {}", d.separation));
                }
            }
            DatasetKind::Import => {
                if d.train_path.is_none() {
                    return fail("dataset", "train_path", "required when kind = \"import\"".into());
                }
                if d.test_path.is_none() {
                    return fail("dataset", "test_path", "required when kind = \"import\"".into());
                }
            }
        }

        let s = &self.schedule;
        if s.kind == ScheduleKind::Explicit && s.counts.len() != s.num_steps {
            return fail(
                "schedule",
                "num_steps",
                format!("is {} but counts has {} entries", s.num_steps, s.counts.len()),
            );
        }
        if d.kind == DatasetKind::Gaussian {
            for protocol in [Protocol::FfOrg, Protocol::Equ] {
                if let Err(e) = self.schedule_spec(protocol, d.num_classes, 0).check() {
                    return fail("schedule", "kind", e.to_string());
                }
            }
        }

        if !(0.0..=1.0).contains(&self.alignment.eta_min) {
            return fail("alignment", "eta_min", format!("must be in [0, 1], got {}", self.alignment.eta_min));
        }
        if !(self.alignment.tau > 0.0 && self.alignment.tau.is_finite()) {
            return fail("alignment", "tau", format!("must be positive, got {}", self.alignment.tau));
        }

        let m = &self.method;
        for (key, v) in [("kd_coeff", m.kd_coeff), ("aux_coeff", m.aux_coeff)] {
            if let Some(v) = v.filter(|v| !(*v >= 0.0 && v.is_finite())) {
                return fail("method", key, format!("must be non-negative, got {v}"));
            }
        }
        if let Some(t) = m.temperature.filter(|t| !(*t > 0.0 && t.is_finite())) {
            return fail("method", "temperature", format!("must be positive, got {t}"));
        }

        let t = &self.train;
        if t.epochs == 0 {
            return fail("train", "epochs", "must be at least 1".into());
        }
        if t.batch_size == 0 {
            return fail("train", "batch_size", "must be at least 1".into());
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) {
            return fail("train", "lr", format!("must be non-negative, got {}", t.lr));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return fail("train", "momentum", format!("must be in [0, 1), got {}", t.momentum));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return fail("train", "weight_decay", format!("must be non-negative, got {}", t.weight_decay));
        }
        if d.kind == DatasetKind::Gaussian && t.buffer_budget > 0 && t.buffer_budget < d.num_classes {
            return fail(
                "train",
                "buffer_budget",
                format!("{} cannot hold one exemplar for each of {} classes", t.buffer_budget, d.num_classes),
            );
        }

        if self.experiment.seeds.is_empty() {
            return fail("experiment", "seeds", "must list at least one seed".into());
        }
        if self.experiment.jobs == 0 {
            return fail("experiment", "jobs", "must be at least 1".into());
        }
        if self.sweep.protocols.is_empty() {
            return fail("sweep", "protocols", "must list at least one protocol".into());
        }
        Ok(())
    }

    /// The full effective config, every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `experiment.out_dir`, unless the environment override is set.
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(&self.experiment.out_dir),
        }
    }

    pub fn schedule_spec(&self, protocol: Protocol, total: usize, seed: u64) -> ScheduleSpec {
        let s = &self.schedule;
        let sched_seed = derive_seed(seed, "schedule", &[]);
        let spec = match protocol {
            Protocol::Equ => ScheduleSpec::new(ScheduleKind::Equal, total, s.num_steps),
            _ => match s.kind {
                ScheduleKind::Explicit => {
                    let mut spec = ScheduleSpec::explicit(s.counts.clone());
                    spec.num_steps = s.num_steps;
                    spec.total_classes = total;
                    spec.min_per_step = s.min_per_step;
                    spec.max_per_step = s.max_per_step.unwrap_or(total);
                    return spec.with_seed(sched_seed);
                }
                _ => ScheduleSpec::new(s.kind, total, s.num_steps)
                    .with_bounds(s.min_per_step, s.max_per_step.unwrap_or(total)),
            },
        };
        spec.with_seed(sched_seed)
    }

    /// Preset with variant, overrides and alignment settings applied.
    pub fn method_preset(&self, name: PresetName, variant: Variant) -> MethodPreset {
        let m = &self.method;
        let mut p = MethodPreset::new(name);
        p.alignment.eta_min = self.alignment.eta_min;
        p.alignment.tau = self.alignment.tau;
        if variant == Variant::Ours {
            p = p.free_flow(self.train.buffer_budget > 0);
        }
        if let Some(v) = m.main_loss {
            p.main_loss = v;
        }
        if let Some(v) = m.kd {
            p.kd = v;
        }
        if let Some(v) = m.kd_coeff {
            p.kd_coeff = v;
        }
        if let Some(v) = m.temperature {
            p.temperature = v;
        }
        if let Some(v) = m.kd_support {
            p.kd_support = v;
        }
        if let Some(v) = m.aux {
            p.aux = v;
        }
        if let Some(v) = m.aux_coeff {
            p.aux_coeff = v;
        }
        if let Some(v) = m.normalize_surrogates {
            p.normalize_surrogates = v;
        }
        if let Some(v) = self.alignment.mode {
            p.alignment.mode = v;
        }
        p
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            buffer_budget: t.buffer_budget,
            selection: t.selection,
            hidden_width: t.hidden_width,
            head_init: t.head_init,
            seed,
        }
    }

    /// Dataset for `seed`. Import paths resolve against `base_dir`.
    pub fn load_dataset(&self, seed: u64, base_dir: &Path) -> Result<DatasetSource> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Gaussian => make_gaussian_dataset(
                d.num_classes,
                d.dim,
                d.train_per_class,
                d.test_per_class,
                d.separation,
                derive_seed(seed, "dataset", &[]),
            ),
            DatasetKind::Import => {
                let read = |p: &Option<String>| -> Result<_> {
                    let path = base_dir.join(p.as_deref().unwrap_or_default());
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                    Ok(read_matrix(&text)?.1)
                };
                DatasetSource::from_parts(read(&d.train_path)?, read(&d.test_path)?)
            }
        }
    }

    /// Runs a plain `run` executes: the configured preset and variant for
    /// every seed.
    pub fn single_runs(&self, total: usize) -> Vec<RunSpec> {
        let protocol = match self.method.variant {
            Variant::Org => Protocol::FfOrg,
            Variant::Ours => Protocol::FfOurs,
        };
        self.experiment
            .seeds
            .iter()
            .map(|&seed| self.run_spec(self.method.preset, protocol, self.method.variant, total, seed))
            .collect()
    }

    /// A config that reproduces exactly one run through `sweep`: its seed,
    /// preset and protocol, with execution-only settings (`out_dir`, `jobs`)
    /// at their defaults so the result does not depend on where or how
    /// widely it ran.
    pub fn for_run(&self, spec: &RunSpec) -> ExperimentConfig {
        let mut c = self.clone();
        c.method.preset = spec.preset;
        c.method.variant = spec.protocol.variant();
        c.experiment = ExperimentSection { seeds: vec![spec.seed], ..Default::default() };
        c.sweep = SweepSection { presets: vec![spec.preset], protocols: vec![spec.protocol] };
        c
    }

    /// Every (preset, protocol, seed) cell of the sweep grid.
    pub fn sweep_runs(&self, total: usize) -> Vec<RunSpec> {
        let presets = if self.sweep.presets.is_empty() { vec![self.method.preset] } else { self.sweep.presets.clone() };
        let mut runs = Vec::new();
        for &preset in &presets {
            for &protocol in &self.sweep.protocols {
                for &seed in &self.experiment.seeds {
                    runs.push(self.run_spec(preset, protocol, protocol.variant(), total, seed));
                }
            }
        }
        runs
    }

    fn run_spec(&self, preset: PresetName, protocol: Protocol, variant: Variant, total: usize, seed: u64) -> RunSpec {
        RunSpec {
            preset,
            protocol,
            seed,
            schedule: self.schedule_spec(protocol, total, seed),
            method: self.method_preset(preset, variant),
            train: self.train_config(seed),
        }
    }
}

/// Sets `section.key` in a config document to `value`, parsed as a TOML
/// value when possible and as a string otherwise.
pub fn apply_override(text: &str, dotted: &str, value: &str) -> Result<String> {
    let bad = |m: String| Error::Config { line: 0, key: dotted.to_string(), message: m };
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| bad(e.message().to_string()))?;
    let (section, key) = dotted.split_once('.').ok_or_else(|| bad("expected `section.key`".into()))?;
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let table = doc
        .entry(section)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        .as_table_mut()
        .ok_or_else(|| bad(format!("`{section}` is not a section")))?;
    table.insert(key.to_string(), parsed);
    Ok(toml::to_string(&doc).expect("table serializes"))
}
