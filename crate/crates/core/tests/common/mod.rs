//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use ffcil::data::LabeledExample;
use ffcil::model::{backward, AuxHead, ClassifierModel, Dense, HeadInit, Objective, TeacherSnapshot};
use ffcil::rng::{self, Rng};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::stream(seed, "tests", &[])
}

/// Cross-entropy by direct log-sum-exp over a plain slice.
pub fn oracle_ce(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[y]
}

pub fn random_logits(r: &mut Rng, b: usize, c: usize, scale: f64) -> Vec<f64> {
    (0..b * c).map(|_| r.random_range(-scale..scale)).collect()
}

fn randomize(d: &mut Dense, r: &mut Rng, scale: f64) {
    d.weight.mapv_inplace(|_| r.random_range(-scale..scale));
    d.bias.mapv_inplace(|_| r.random_range(-scale..scale));
}

/// A small problem for gradient checking: 3 classes (2 old, 1 new), d = 4.
pub struct GradInstance {
    pub model: ClassifierModel,
    pub teacher: Option<TeacherSnapshot>,
    pub aux: Option<AuxHead>,
    pub batch: Vec<LabeledExample>,
}

pub const OLD: usize = 2;
pub const NEW: usize = 1;
pub const DIM: usize = 4;

pub fn grad_instance(seed: u64, hidden: usize, teacher: bool, aux: bool) -> GradInstance {
    let mut r = rng(seed);
    let mut model = ClassifierModel::new(DIM, hidden, seed);
    model.expand_head(OLD, HeadInit::SmallUniform, seed).unwrap();
    model.expand_head(NEW, HeadInit::SmallUniform, seed).unwrap();
    if let Some(h) = model.hidden.as_mut() {
        randomize(h, &mut r, 0.8);
    }
    randomize(&mut model.head, &mut r, 1.0);
    let teacher = teacher.then(|| {
        let mut t = ClassifierModel::new(DIM, hidden, seed ^ 0xabc);
        t.expand_head(OLD, HeadInit::SmallUniform, seed).unwrap();
        randomize(&mut t.head, &mut r, 1.5);
        t.snapshot()
    });
    let aux = aux.then(|| {
        let mut a = AuxHead::new(NEW, model.feature_dim(), HeadInit::SmallUniform, seed);
        randomize(&mut a.layer, &mut r, 1.0);
        a
    });
    let b = r.random_range(3..9);
    let batch = (0..b)
        .map(|i| {
            // Always at least one old and one new sample.
            let label = match i {
                0 => 0,
                1 => OLD,
                _ => r.random_range(0..OLD + NEW),
            };
            LabeledExample::new((0..DIM).map(|_| r.random_range(-1.5..1.5)).collect(), label)
        })
        .collect();
    GradInstance { model, teacher, aux, batch }
}

fn layers_mut<'a>(model: &'a mut ClassifierModel, aux: Option<&'a mut AuxHead>) -> Vec<&'a mut Dense> {
    let mut v: Vec<&mut Dense> = Vec::new();
    if let Some(h) = model.hidden.as_mut() {
        v.push(h);
    }
    v.push(&mut model.head);
    if let Some(a) = aux {
        v.push(&mut a.layer);
    }
    v
}

/// Parameters in the same order as `Gradients::flatten`.
fn param_mut<'a>(model: &'a mut ClassifierModel, aux: Option<&'a mut AuxHead>, mut idx: usize) -> &'a mut f64 {
    for d in layers_mut(model, aux) {
        let nw = d.weight.len();
        if idx < nw {
            return d.weight.iter_mut().nth(idx).unwrap();
        }
        idx -= nw;
        let nb = d.bias.len();
        if idx < nb {
            return d.bias.iter_mut().nth(idx).unwrap();
        }
        idx -= nb;
    }
    panic!("parameter index out of range");
}

pub fn loss_of(inst: &GradInstance, objective: &Objective) -> f64 {
    let batch: Vec<&LabeledExample> = inst.batch.iter().collect();
    backward(&inst.model, &batch, objective, inst.teacher.as_ref(), inst.aux.as_ref()).unwrap().0
}

/// `||analytic - numeric|| / max(||analytic||, ||numeric||)` with central
/// differences of step `h`.
pub fn gradcheck(inst: &mut GradInstance, objective: &Objective, h: f64) -> f64 {
    let batch: Vec<&LabeledExample> = inst.batch.iter().collect();
    let analytic = backward(&inst.model, &batch, objective, inst.teacher.as_ref(), inst.aux.as_ref())
        .unwrap()
        .1
        .flatten();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let orig = *param_mut(&mut inst.model, inst.aux.as_mut(), i);
        *param_mut(&mut inst.model, inst.aux.as_mut(), i) = orig + h;
        let up = loss_of(inst, objective);
        *param_mut(&mut inst.model, inst.aux.as_mut(), i) = orig - h;
        let down = loss_of(inst, objective);
        *param_mut(&mut inst.model, inst.aux.as_mut(), i) = orig;
        numeric.push((up - down) / (2.0 * h));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let scale = norm(&analytic).max(norm(&numeric));
    if scale < 1e-14 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
