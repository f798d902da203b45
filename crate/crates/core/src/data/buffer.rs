//! Exemplar memory with a global budget and mixed current/replay batching.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledExample;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Maps raw features to the space herding measures distances in.
pub type FeatureMap<'a> = dyn Fn(&[f64]) -> Vec<f64> + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Random,
    Herding,
}

/// Per-class exemplar lists, each kept in priority order so that shrinking a
/// quota keeps the best prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    budget: usize,
    selection: Selection,
    seed: u64,
    store: BTreeMap<usize, Vec<LabeledExample>>,
}

impl ReplayBuffer {
    pub fn new(budget: usize, selection: Selection, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidArgument("replay budget must be positive".into()));
        }
        Ok(ReplayBuffer { budget, selection, seed, store: BTreeMap::new() })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.store.keys().copied()
    }

    pub fn class_exemplars(&self, class: usize) -> &[LabeledExample] {
        self.store.get(&class).map_or(&[], Vec::as_slice)
    }

    /// All exemplars, by class then priority.
    pub fn exemplars(&self) -> impl Iterator<Item = &LabeledExample> {
        self.store.values().flatten()
    }

    /// Re-balances to `budget / classes_seen` per class: existing classes are
    /// truncated, new classes are filled from `step_train` by the configured
    /// selection rule. Herding works in `feature_map` space when given, raw
    /// feature space otherwise. On error the buffer is left untouched.
    pub fn update(
        &mut self,
        step_train: &[LabeledExample],
        new_classes: &[usize],
        feature_map: Option<&FeatureMap<'_>>,
    ) -> Result<()> {
        if let Some(&c) = new_classes.iter().find(|c| self.store.contains_key(c)) {
            return Err(Error::InvalidArgument(format!("class {c} is already in the replay buffer")));
        }
        let seen = self.store.len() + new_classes.len();
        if self.budget < seen {
            return Err(Error::BudgetTooSmall { budget: self.budget, classes: seen });
        }
        let quota = self.budget / seen;
        for exemplars in self.store.values_mut() {
            exemplars.truncate(quota);
        }
        for &class in new_classes {
            let members: Vec<&LabeledExample> = step_train.iter().filter(|e| e.label == class).collect();
            let order = match self.selection {
                Selection::Random => {
                    let mut idx: Vec<usize> = (0..members.len()).collect();
                    idx.shuffle(&mut rng::stream(self.seed, "buffer/random", &[class as u64]));
                    idx.truncate(quota);
                    idx
                }
                Selection::Herding => {
                    let feats: Vec<Vec<f64>> = members
                        .iter()
                        .map(|e| feature_map.map_or_else(|| e.features.clone(), |f| f(&e.features)))
                        .collect();
                    herding_order(&feats, quota)
                }
            };
            self.store.insert(class, order.into_iter().map(|i| members[i].clone()).collect());
        }
        Ok(())
    }
}

/// Greedy herding: pick `k` points one at a time, each time taking the
/// candidate whose inclusion brings the running mean closest to the full
/// mean. Ties go to the lowest index.
pub(crate) fn herding_order(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut taken = vec![false; n];
    let mut running = vec![0.0; dim];
    let mut order = Vec::with_capacity(k.min(n));
    for step in 1..=k.min(n) {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate().filter(|(i, _)| !taken[*i]) {
            let err: f64 = mean
                .iter()
                .zip(&running)
                .zip(p)
                .map(|((m, s), v)| (m - (s + v) / step as f64).powi(2))
                .sum();
            if best.is_none_or(|(_, b)| err < b) {
                best = Some((i, err));
            }
        }
        let (i, _) = best.expect("a candidate remains while step <= n");
        taken[i] = true;
        for (s, v) in running.iter_mut().zip(&points[i]) {
            *s += v;
        }
        order.push(i);
    }
    order
}

/// One epoch over the concatenation of `current` and every buffered
/// exemplar, shuffled and cut into batches of `batch_size` (the last batch
/// may be smaller). Every example appears exactly once.
pub fn epoch_batches<'a>(
    buffer: Option<&'a ReplayBuffer>,
    current: &'a [LabeledExample],
    batch_size: usize,
    rng: &mut Rng,
) -> Vec<Vec<&'a LabeledExample>> {
    let mut pool: Vec<&LabeledExample> = current.iter().collect();
    if let Some(buf) = buffer {
        pool.extend(buf.exemplars());
    }
    pool.shuffle(rng);
    pool.chunks(batch_size.max(1)).map(<[_]>::to_vec).collect()
}
