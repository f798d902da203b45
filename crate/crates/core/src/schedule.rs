//! Class-arrival schedules.
//!
//! A schedule says how many classes arrive at each step and which ones. Two
//! constraints make a schedule valid: every step introduces at least one new
//! class, and no class ever arrives twice. Beyond that the per-step counts are
//! unconstrained, which is what separates free-flow streams from the usual
//! equal splits.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Per-step new-class counts plus the identity of the classes in each step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementSchedule {
    pub counts: Vec<usize>,
    pub class_sets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Equal,
    Ascending,
    Descending,
    Fluctuating,
    Extreme,
    Explicit,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 6] = [
        ScheduleKind::Equal,
        ScheduleKind::Ascending,
        ScheduleKind::Descending,
        ScheduleKind::Fluctuating,
        ScheduleKind::Extreme,
        ScheduleKind::Explicit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Equal => "equal",
            ScheduleKind::Ascending => "ascending",
            ScheduleKind::Descending => "descending",
            ScheduleKind::Fluctuating => "fluctuating",
            ScheduleKind::Extreme => "extreme",
            ScheduleKind::Explicit => "explicit",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown schedule kind `{s}`")))
    }
}

/// Parameters for [`generate_schedule`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub total_classes: usize,
    pub num_steps: usize,
    pub min_per_step: usize,
    pub max_per_step: usize,
    pub explicit_counts: Option<Vec<usize>>,
    pub seed: u64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, total_classes: usize, num_steps: usize) -> Self {
        ScheduleSpec {
            kind,
            total_classes,
            num_steps,
            min_per_step: 1,
            max_per_step: total_classes.max(1),
            explicit_counts: None,
            seed: 0,
        }
    }

    pub fn explicit(counts: Vec<usize>) -> Self {
        let total = counts.iter().sum();
        let max = counts.iter().copied().max().unwrap_or(1);
        ScheduleSpec {
            kind: ScheduleKind::Explicit,
            total_classes: total,
            num_steps: counts.len(),
            min_per_step: 1,
            max_per_step: max.max(1),
            explicit_counts: Some(counts),
            seed: 0,
        }
    }

    pub fn with_bounds(mut self, min_per_step: usize, max_per_step: usize) -> Self {
        self.min_per_step = min_per_step;
        self.max_per_step = max_per_step;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Checks the feasibility bounds, naming the first one violated.
    pub fn check(&self) -> Result<()> {
        let infeasible = |m: String| Err(Error::InfeasibleSchedule(m));
        if self.num_steps == 0 {
            return infeasible("num_steps must be at least 1".into());
        }
        if self.total_classes == 0 {
            return infeasible("total_classes must be at least 1".into());
        }
        if self.min_per_step == 0 {
            return infeasible("min_per_step must be at least 1".into());
        }
        if self.max_per_step < self.min_per_step {
            return infeasible(format!(
                "max_per_step ({}) < min_per_step ({})",
                self.max_per_step, self.min_per_step
            ));
        }
        match self.kind {
            ScheduleKind::Explicit => {
                let Some(counts) = &self.explicit_counts else {
                    return infeasible("explicit kind requires explicit_counts".into());
                };
                if counts.len() != self.num_steps {
                    return infeasible(format!(
                        "explicit_counts has {} entries but num_steps is {}",
                        counts.len(),
                        self.num_steps
                    ));
                }
                if let Some((t, &c)) = counts
                    .iter()
                    .enumerate()
                    .find(|(_, &c)| c < self.min_per_step || c > self.max_per_step)
                {
                    return infeasible(format!(
                        "explicit_counts[{t}] = {c} outside [{}, {}]",
                        self.min_per_step, self.max_per_step
                    ));
                }
                let sum: usize = counts.iter().sum();
                if sum != self.total_classes {
                    return infeasible(format!(
                        "explicit_counts sum to {sum} but total_classes is {}",
                        self.total_classes
                    ));
                }
            }
            ScheduleKind::Extreme => {
                // The tail steps draw one or two classes; the first step must
                // stay non-empty even when every tail draw is two.
                let tail_max = 2 * (self.num_steps - 1);
                if self.total_classes <= tail_max {
                    return infeasible(format!(
                        "total_classes ({}) must exceed 2 * (num_steps - 1) = {tail_max}",
                        self.total_classes
                    ));
                }
            }
            _ => {
                let lo = self.num_steps * self.min_per_step;
                let hi = self.num_steps * self.max_per_step;
                if self.total_classes < lo {
                    return infeasible(format!(
                        "total_classes ({}) < num_steps * min_per_step ({lo})",
                        self.total_classes
                    ));
                }
                if self.total_classes > hi {
                    return infeasible(format!(
                        "total_classes ({}) > num_steps * max_per_step ({hi})",
                        self.total_classes
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The first constraint a schedule breaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    Empty,
    LengthMismatch { counts: usize, class_sets: usize },
    /// A step introduces no classes.
    FreeFlow { step: usize },
    CountMismatch { step: usize, count: usize, set_len: usize },
    /// A class appears in more than one step (or twice in one step).
    NonRepetition { label: usize, first_step: usize, second_step: usize },
    Coverage { label: usize },
    TotalMismatch { expected: usize, got: usize },
}

impl fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleViolation::Empty => write!(f, "schedule has no steps"),
            ScheduleViolation::LengthMismatch { counts, class_sets } => {
                write!(f, "{counts} counts but {class_sets} class sets")
            }
            ScheduleViolation::FreeFlow { step } => {
                write!(f, "free-flow: step {step} introduces no classes")
            }
            ScheduleViolation::CountMismatch { step, count, set_len } => {
                write!(f, "step {step}: count {count} but {set_len} class labels")
            }
            ScheduleViolation::NonRepetition { label, first_step, second_step } => write!(
                f,
                "non-repetition: class {label} appears in steps {first_step} and {second_step}"
            ),
            ScheduleViolation::Coverage { label } => {
                write!(f, "coverage: class {label} is outside 0..N or missing")
            }
            ScheduleViolation::TotalMismatch { expected, got } => {
                write!(f, "total: expected {expected} classes, schedule has {got}")
            }
        }
    }
}

impl IncrementSchedule {
    pub fn num_steps(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Class labels in arrival order (concatenation of the step sets).
    pub fn arrival_order(&self) -> Vec<usize> {
        self.class_sets.iter().flatten().copied().collect()
    }

    /// Number of classes known after each step.
    pub fn cumulative(&self) -> Vec<usize> {
        self.counts
            .iter()
            .scan(0, |acc, &c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }

    /// Map from class label to the step that introduces it.
    pub fn step_of_class(&self) -> HashMap<usize, usize> {
        self.class_sets
            .iter()
            .enumerate()
            .flat_map(|(t, set)| set.iter().map(move |&c| (c, t)))
            .collect()
    }

    /// Line-oriented text form: a `schedule <T>` header, then one
    /// `<count> | <label> <label> ...` line per step.
    pub fn to_text(&self) -> String {
        let mut out = format!("schedule {}\n", self.counts.len());
        for (count, set) in self.counts.iter().zip(&self.class_sets) {
            let labels: Vec<String> = set.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!("{count} | {}\n", labels.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty schedule block".into(),
        })?;
        let steps: usize = header
            .strip_prefix("schedule ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                line: hline,
                message: format!("expected `schedule <steps>`, got `{header}`"),
            })?;
        let mut counts = Vec::with_capacity(steps);
        let mut class_sets = Vec::with_capacity(steps);
        for (line, l) in lines {
            let bad = |message: String| Error::Parse { line, message };
            let (count, labels) = l
                .split_once('|')
                .ok_or_else(|| bad(format!("expected `<count> | <labels>`, got `{l}`")))?;
            let count: usize = count
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad count `{}`", count.trim())))?;
            let set = labels
                .split_whitespace()
                .map(|s| s.parse::<usize>().map_err(|_| bad(format!("bad label `{s}`"))))
                .collect::<Result<Vec<_>>>()?;
            if set.len() != count {
                return Err(bad(format!("count {count} but {} labels", set.len())));
            }
            counts.push(count);
            class_sets.push(set);
        }
        if counts.len() != steps {
            return Err(Error::Parse {
                line: hline,
                message: format!("header declares {steps} steps, found {}", counts.len()),
            });
        }
        Ok(IncrementSchedule { counts, class_sets })
    }
}

/// Accepts iff the schedule is free-flow, non-repeating, covers exactly
/// `0..expected_total`, and its counts match its class sets.
pub fn validate_schedule(
    s: &IncrementSchedule,
    expected_total: usize,
) -> std::result::Result<(), ScheduleViolation> {
    if s.counts.is_empty() {
        return Err(ScheduleViolation::Empty);
    }
    if s.counts.len() != s.class_sets.len() {
        return Err(ScheduleViolation::LengthMismatch {
            counts: s.counts.len(),
            class_sets: s.class_sets.len(),
        });
    }
    if let Some(step) = s.counts.iter().position(|&c| c == 0) {
        return Err(ScheduleViolation::FreeFlow { step });
    }
    for (step, (&count, set)) in s.counts.iter().zip(&s.class_sets).enumerate() {
        if count != set.len() {
            return Err(ScheduleViolation::CountMismatch { step, count, set_len: set.len() });
        }
    }
    let mut seen: HashMap<usize, usize> = HashMap::new();
    for (step, set) in s.class_sets.iter().enumerate() {
        for &label in set {
            if let Some(&first_step) = seen.get(&label) {
                return Err(ScheduleViolation::NonRepetition { label, first_step, second_step: step });
            }
            seen.insert(label, step);
        }
    }
    let n = s.total();
    if let Some(label) = s.class_sets.iter().flatten().copied().find(|&c| c >= n) {
        return Err(ScheduleViolation::Coverage { label });
    }
    if n != expected_total {
        return Err(ScheduleViolation::TotalMismatch { expected: expected_total, got: n });
    }
    Ok(())
}

/// Builds a schedule from a spec. Counts depend only on `(spec, seed)`; class
/// identities are a seeded permutation of `0..N` sliced by the counts.
pub fn generate_schedule(spec: &ScheduleSpec) -> Result<IncrementSchedule> {
    spec.check()?;
    let counts = match spec.kind {
        ScheduleKind::Equal => equal_counts(spec.total_classes, spec.num_steps),
        ScheduleKind::Ascending => ramp_counts(spec),
        ScheduleKind::Descending => {
            let mut c = ramp_counts(spec);
            c.reverse();
            c
        }
        ScheduleKind::Fluctuating => fluctuating_counts(spec)?,
        ScheduleKind::Extreme => extreme_counts(spec),
        ScheduleKind::Explicit => spec.explicit_counts.clone().unwrap_or_default(),
    };
    let mut perm: Vec<usize> = (0..spec.total_classes).collect();
    perm.shuffle(&mut rng::stream(spec.seed, "schedule/classes", &[]));
    let mut class_sets = Vec::with_capacity(counts.len());
    let mut start = 0;
    for &c in &counts {
        class_sets.push(perm[start..start + c].to_vec());
        start += c;
    }
    Ok(IncrementSchedule { counts, class_sets })
}

fn equal_counts(total: usize, steps: usize) -> Vec<usize> {
    let (base, rem) = (total / steps, total % steps);
    (0..steps).map(|t| base + usize::from(t < rem)).collect()
}

/// Non-decreasing counts: `min_per_step` everywhere plus the surplus spread in
/// proportion to step position (0, 1, ..., T-1) with largest-remainder
/// rounding, then capped at `max_per_step` with overflow pushed down.
fn ramp_counts(spec: &ScheduleSpec) -> Vec<usize> {
    let steps = spec.num_steps;
    let mut counts = vec![spec.min_per_step; steps];
    if steps == 1 {
        counts[0] = spec.total_classes;
        return counts;
    }
    let surplus = (spec.total_classes - steps * spec.min_per_step) as u128;
    let weight_sum = (steps * (steps - 1) / 2) as u128;
    let mut remainders = Vec::with_capacity(steps);
    let mut assigned = 0u128;
    for (t, c) in counts.iter_mut().enumerate() {
        let share = surplus * t as u128;
        *c += (share / weight_sum) as usize;
        assigned += share / weight_sum;
        remainders.push((share % weight_sum, t));
    }
    // Ties go to the later step so the ramp stays monotone.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
    for &(_, t) in remainders.iter().take((surplus - assigned) as usize) {
        counts[t] += 1;
    }
    let mut overflow = 0;
    for c in counts.iter_mut() {
        if *c > spec.max_per_step {
            overflow += *c - spec.max_per_step;
            *c = spec.max_per_step;
        }
    }
    for c in counts.iter_mut().rev() {
        let room = (spec.max_per_step - *c).min(overflow);
        *c += room;
        overflow -= room;
    }
    counts
}

const FLUCTUATION_ATTEMPTS: usize = 1000;

/// Uniform draws in `[min, max]`, repaired to the target sum by ±1 moves at
/// random positions; redrawn until some adjacent pair jumps by at least
/// `ceil((max - min) / 2)`.
fn fluctuating_counts(spec: &ScheduleSpec) -> Result<Vec<usize>> {
    let (lo, hi) = (spec.min_per_step, spec.max_per_step);
    let jump = (hi - lo).div_ceil(2);
    let mut rng = rng::stream(spec.seed, "schedule/counts", &[]);
    for _ in 0..FLUCTUATION_ATTEMPTS {
        let mut counts: Vec<usize> = (0..spec.num_steps).map(|_| rng.random_range(lo..=hi)).collect();
        let mut sum: usize = counts.iter().sum();
        while sum != spec.total_classes {
            let t = rng.random_range(0..counts.len());
            if sum < spec.total_classes && counts[t] < hi {
                counts[t] += 1;
                sum += 1;
            } else if sum > spec.total_classes && counts[t] > lo {
                counts[t] -= 1;
                sum -= 1;
            }
        }
        let fluctuates = counts.len() < 2 || counts.windows(2).any(|w| w[0].abs_diff(w[1]) >= jump);
        if fluctuates {
            return Ok(counts);
        }
    }
    Err(Error::InfeasibleSchedule(format!(
        "no fluctuating schedule with an adjacent jump of at least {jump} found in {FLUCTUATION_ATTEMPTS} draws"
    )))
}

/// One large first step followed by steps of one or two classes.
fn extreme_counts(spec: &ScheduleSpec) -> Vec<usize> {
    let mut rng = rng::stream(spec.seed, "schedule/counts", &[]);
    let tail: Vec<usize> = (1..spec.num_steps).map(|_| rng.random_range(1..=2)).collect();
    let mut counts = Vec::with_capacity(spec.num_steps);
    counts.push(spec.total_classes - tail.iter().sum::<usize>());
    counts.extend(tail);
    counts
}
