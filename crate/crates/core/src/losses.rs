//! Loss aggregation objectives.
//!
//! Every objective here is a weighted sum of per-sample terms. Each operation
//! returns an [`AggregatedLoss`] carrying the per-sample terms and the weights
//! that combine them, so `value == Σ_i weight_i · term_i`. The model's
//! backward pass only needs those weights plus the gradient of each
//! per-sample term, which keeps one gradient path for every aggregation.
//!
//! Aggregations:
//! - instance mean: every sample weighs `1/B`, which implicitly weighs class
//!   `c` by its batch frequency `n_c / B`;
//! - class-wise mean (CWM): average within each batch class, then uniformly
//!   over the classes present, so every class weighs `1 / |classes|`;
//! - replay-only: class-wise mean over old-class samples only, scaled by the
//!   replay fraction `B_old / B`; new-class samples weigh exactly zero.

use std::collections::BTreeMap;

use ndarray::{s, Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything the objectives need about one mini-batch.
///
/// Labels are in arrival order: a label `y < old_classes` belongs to a class
/// learned in an earlier step.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a> {
    /// Student logits, `B x C`.
    pub logits: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    /// Frozen teacher logits over the old classes, `B x K`.
    pub teacher_logits: Option<ArrayView2<'a, f64>>,
    /// Auxiliary head logits, `B x (|C_t| + 1)`.
    pub aux_logits: Option<ArrayView2<'a, f64>>,
    pub old_classes: usize,
    pub step_classes: usize,
}

impl<'a> BatchView<'a> {
    pub fn new(logits: ArrayView2<'a, f64>, labels: &'a [usize], old_classes: usize, step_classes: usize) -> Self {
        BatchView { logits, labels, teacher_logits: None, aux_logits: None, old_classes, step_classes }
    }

    pub fn with_teacher(mut self, teacher_logits: ArrayView2<'a, f64>) -> Self {
        self.teacher_logits = Some(teacher_logits);
        self
    }

    pub fn with_aux(mut self, aux_logits: ArrayView2<'a, f64>) -> Self {
        self.aux_logits = Some(aux_logits);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn old_count(&self) -> usize {
        self.labels.iter().filter(|&&y| y < self.old_classes).count()
    }

    pub fn new_count(&self) -> usize {
        self.len() - self.old_count()
    }

    /// Step-relative labels: every old class collapses to 0, new class
    /// `K + j` maps to `j + 1`.
    pub fn step_relative_labels(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|&y| if y < self.old_classes { 0 } else { y - self.old_classes + 1 })
            .collect()
    }

    /// `n_c` for every class present in the batch.
    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        group_counts(self.labels)
    }
}

fn group_counts(groups: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &g in groups {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// A loss value together with the per-sample decomposition that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedLoss {
    pub value: f64,
    pub weights: Vec<f64>,
    /// Per-sample terms being aggregated (cross-entropy or soft
    /// cross-entropy, both non-negative).
    pub terms: Vec<f64>,
}

impl AggregatedLoss {
    /// `Σ_i weight_i · term_i`, computed independently of `value`.
    pub fn weighted_sum(&self) -> f64 {
        self.weights.iter().zip(&self.terms).map(|(w, l)| w * l).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    InstanceMean,
    #[serde(rename = "cwm")]
    ClassWiseMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdKind {
    Vanilla,
    ReplayOnly,
    ClassWiseMean,
}

/// Where the student's distillation distribution lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdSupport {
    /// Softmax over the first `K` student logits only.
    #[default]
    Renormalized,
    /// Softmax over all `C` student logits, then the first `K` entries.
    Sliced,
}

// ---------------------------------------------------------------------------
// numerics

pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = z.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e / sum
}

pub fn log_softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + z.mapv(|v| (v - max).exp()).sum().ln();
    z.mapv(|v| v - lse)
}

/// `-log softmax(z)[y]`.
pub fn cross_entropy(z: ArrayView1<f64>, y: usize) -> f64 {
    -log_softmax(z)[y]
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn ce_logit_grad(z: ArrayView1<f64>, y: usize) -> Array1<f64> {
    let mut g = softmax(z);
    g[y] -= 1.0;
    g
}

/// Soft cross-entropy `-Σ_{c<K} p(c) log q(c)` between the tempered teacher
/// distribution `p` and the tempered student distribution `q`.
pub fn kd_term(student: ArrayView1<f64>, teacher: ArrayView1<f64>, temperature: f64, support: KdSupport) -> f64 {
    let k = teacher.len();
    let p = softmax(teacher.mapv(|v| v / temperature).view());
    let log_q = match support {
        KdSupport::Renormalized => log_softmax(student.slice(s![..k]).mapv(|v| v / temperature).view()),
        KdSupport::Sliced => log_softmax(student.mapv(|v| v / temperature).view()).slice(s![..k]).to_owned(),
    };
    -p.iter().zip(&log_q).map(|(p, lq)| p * lq).sum::<f64>()
}

/// Gradient of [`kd_term`] with respect to all `C` student logits.
pub fn kd_logit_grad(
    student: ArrayView1<f64>,
    teacher: ArrayView1<f64>,
    temperature: f64,
    support: KdSupport,
) -> Array1<f64> {
    let k = teacher.len();
    let p = softmax(teacher.mapv(|v| v / temperature).view());
    let mut g = Array1::zeros(student.len());
    match support {
        KdSupport::Renormalized => {
            let q = softmax(student.slice(s![..k]).mapv(|v| v / temperature).view());
            g.slice_mut(s![..k]).assign(&((&q - &p) / temperature));
        }
        KdSupport::Sliced => {
            let q = softmax(student.mapv(|v| v / temperature).view());
            g.assign(&(&q / temperature));
            let mut head = g.slice_mut(s![..k]);
            head -= &(&p / temperature);
        }
    }
    g
}

// ---------------------------------------------------------------------------
// aggregations over per-sample terms

pub fn aggregate_instance_mean(terms: Vec<f64>) -> AggregatedLoss {
    let b = terms.len() as f64;
    let value = terms.iter().sum::<f64>() / b;
    AggregatedLoss { value, weights: vec![1.0 / b; terms.len()], terms }
}

/// The same value as the instance mean, evaluated as a frequency-weighted
/// sum of class-conditional means.
pub fn aggregate_class_decomposed(terms: Vec<f64>, groups: &[usize]) -> AggregatedLoss {
    let b = terms.len() as f64;
    let value = class_means(&terms, groups)
        .into_iter()
        .map(|(_, n, mean)| (n as f64 / b) * mean)
        .sum();
    AggregatedLoss { value, weights: vec![1.0 / b; terms.len()], terms }
}

pub fn aggregate_class_wise_mean(terms: Vec<f64>, groups: &[usize]) -> AggregatedLoss {
    let means = class_means(&terms, groups);
    let present = means.len() as f64;
    let value = means.iter().map(|(_, _, m)| m).sum::<f64>() / present;
    let counts = group_counts(groups);
    let weights = groups.iter().map(|g| 1.0 / (present * counts[g] as f64)).collect();
    AggregatedLoss { value, weights, terms }
}

/// Class-wise mean over samples with `label < old_classes`, scaled by the
/// replay fraction. Zero (with zero weights) when the batch has no old-class
/// samples.
pub fn aggregate_replay_only(terms: Vec<f64>, labels: &[usize], old_classes: usize) -> AggregatedLoss {
    let b = terms.len() as f64;
    let old: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] < old_classes).collect();
    if old.is_empty() {
        return AggregatedLoss { value: 0.0, weights: vec![0.0; terms.len()], terms };
    }
    let old_terms: Vec<f64> = old.iter().map(|&i| terms[i]).collect();
    let old_labels: Vec<usize> = old.iter().map(|&i| labels[i]).collect();
    let fraction = old.len() as f64 / b;
    let inner = aggregate_class_wise_mean(old_terms, &old_labels);
    let mut weights = vec![0.0; terms.len()];
    for (&i, w) in old.iter().zip(&inner.weights) {
        weights[i] = fraction * w;
    }
    AggregatedLoss { value: fraction * inner.value, weights, terms }
}

/// `(group, n_g, mean of terms in g)` in ascending group order.
fn class_means(terms: &[f64], groups: &[usize]) -> Vec<(usize, usize, f64)> {
    let mut acc: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (&g, &l) in groups.iter().zip(terms) {
        let e = acc.entry(g).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += l;
    }
    acc.into_iter().map(|(g, (n, sum))| (g, n, sum / n as f64)).collect()
}

// ---------------------------------------------------------------------------
// objectives over a batch view

pub fn per_sample_ce(logits: ArrayView2<f64>, labels: &[usize]) -> Vec<f64> {
    labels.iter().enumerate().map(|(i, &y)| cross_entropy(logits.row(i), y)).collect()
}

pub fn instance_mean_ce(view: &BatchView) -> AggregatedLoss {
    aggregate_instance_mean(per_sample_ce(view.logits, view.labels))
}

pub fn classwise_decomposed_ce(view: &BatchView) -> AggregatedLoss {
    aggregate_class_decomposed(per_sample_ce(view.logits, view.labels), view.labels)
}

pub fn cwm_ce(view: &BatchView) -> AggregatedLoss {
    aggregate_class_wise_mean(per_sample_ce(view.logits, view.labels), view.labels)
}

/// Per-sample soft cross-entropy against the teacher, over the old classes.
pub fn kd_terms(view: &BatchView, temperature: f64, support: KdSupport) -> Result<Vec<f64>> {
    let teacher = view.teacher_logits.ok_or(Error::MissingTeacher)?;
    if view.old_classes == 0 || teacher.ncols() != view.old_classes {
        return Err(Error::InvalidArgument(format!(
            "teacher has {} outputs but the batch declares {} old classes",
            teacher.ncols(),
            view.old_classes
        )));
    }
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    Ok((0..view.len())
        .map(|i| kd_term(view.logits.row(i), teacher.row(i), temperature, support))
        .collect())
}

pub fn vanilla_kd(view: &BatchView, temperature: f64, support: KdSupport) -> Result<AggregatedLoss> {
    Ok(aggregate_instance_mean(kd_terms(view, temperature, support)?))
}

pub fn replay_only_kd(view: &BatchView, temperature: f64, support: KdSupport) -> Result<AggregatedLoss> {
    Ok(aggregate_replay_only(kd_terms(view, temperature, support)?, view.labels, view.old_classes))
}

pub fn cwm_kd(view: &BatchView, temperature: f64, support: KdSupport) -> Result<AggregatedLoss> {
    Ok(aggregate_class_wise_mean(kd_terms(view, temperature, support)?, view.labels))
}

pub fn kd_loss(view: &BatchView, kind: KdKind, temperature: f64, support: KdSupport) -> Result<AggregatedLoss> {
    match kind {
        KdKind::Vanilla => vanilla_kd(view, temperature, support),
        KdKind::ReplayOnly => replay_only_kd(view, temperature, support),
        KdKind::ClassWiseMean => cwm_kd(view, temperature, support),
    }
}

fn aux_terms(view: &BatchView) -> Result<(Vec<f64>, Vec<usize>)> {
    let aux = view.aux_logits.ok_or(Error::MissingAuxLogits)?;
    let targets = view.step_relative_labels();
    if let Some(&t) = targets.iter().find(|&&t| t >= aux.ncols()) {
        return Err(Error::LabelOutOfRange { label: t, classes: aux.ncols() });
    }
    Ok((per_sample_ce(aux, &targets), targets))
}

/// Instance-mean cross-entropy of the auxiliary head against step-relative
/// targets.
pub fn aux_ce(view: &BatchView) -> Result<AggregatedLoss> {
    let (terms, _) = aux_terms(view)?;
    Ok(aggregate_instance_mean(terms))
}

/// Class-wise mean over the step-relative label groups.
pub fn cwm_aux_ce(view: &BatchView) -> Result<AggregatedLoss> {
    let (terms, targets) = aux_terms(view)?;
    Ok(aggregate_class_wise_mean(terms, &targets))
}

pub fn main_loss(view: &BatchView, aggregation: Aggregation) -> AggregatedLoss {
    match aggregation {
        Aggregation::InstanceMean => instance_mean_ce(view),
        Aggregation::ClassWiseMean => cwm_ce(view),
    }
}

pub fn aux_loss(view: &BatchView, aggregation: Aggregation) -> Result<AggregatedLoss> {
    match aggregation {
        Aggregation::InstanceMean => aux_ce(view),
        Aggregation::ClassWiseMean => cwm_aux_ce(view),
    }
}

// ---------------------------------------------------------------------------
// scale normalizers and weighted combination

/// Divides a contrastive loss by `ln(n_eff)`, its value at chance level.
pub fn normalize_infonce(raw: f64, n_eff: usize) -> Result<f64> {
    if n_eff < 2 {
        return Err(Error::InvalidArgument(format!("n_eff must be at least 2, got {n_eff}")));
    }
    Ok(raw / (n_eff as f64).ln())
}

/// Divides a loss summed over the new-class subspace by its dimension.
pub fn normalize_kl(raw: f64, step_classes: usize) -> Result<f64> {
    if step_classes == 0 {
        return Err(Error::InvalidArgument("step class count must be at least 1".into()));
    }
    Ok(raw / step_classes as f64)
}

/// `Σ_j coeff_j · value_j` over `(value, coeff)` pairs.
pub fn combine_weighted(terms: &[(f64, f64)]) -> f64 {
    terms.iter().map(|(v, c)| c * v).sum()
}

/// Raw auxiliary losses of an expansion-style method. Only `aux` is computed
/// in this crate; the others are supplied by the caller.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AuxiliaryTerms {
    pub aux: f64,
    /// Contrastive loss and its effective negative count.
    pub contrastive: Option<(f64, usize)>,
    pub transfer: Option<f64>,
    /// KL term and the number of new classes it spans.
    pub kl: Option<(f64, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryCoefficients {
    pub aux: f64,
    pub contrastive: f64,
    pub transfer: f64,
    pub kl: f64,
}

impl Default for AuxiliaryCoefficients {
    fn default() -> Self {
        AuxiliaryCoefficients { aux: 1.0, contrastive: 1.0, transfer: 1.0, kl: 1.0 }
    }
}

/// Weighted auxiliary objective. With `normalize`, the contrastive term is
/// divided by `ln(n_eff)` and the KL term by the new-class count before
/// weighting.
pub fn combine_auxiliary(terms: &AuxiliaryTerms, coeffs: &AuxiliaryCoefficients, normalize: bool) -> Result<f64> {
    let mut parts = vec![(terms.aux, coeffs.aux)];
    if let Some((raw, n_eff)) = terms.contrastive {
        let v = if normalize { normalize_infonce(raw, n_eff)? } else { raw };
        parts.push((v, coeffs.contrastive));
    }
    if let Some(raw) = terms.transfer {
        parts.push((raw, coeffs.transfer));
    }
    if let Some((raw, c_t)) = terms.kl {
        let v = if normalize { normalize_kl(raw, c_t)? } else { raw };
        parts.push((v, coeffs.kl));
    }
    Ok(combine_weighted(&parts))
}
