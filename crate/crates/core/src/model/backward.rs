use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::{stack_features, AuxHead, ClassifierModel, Dense, TeacherSnapshot};
use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::losses::{self, Aggregation, BatchView, KdKind, KdSupport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdTerm {
    pub kind: KdKind,
    pub coeff: f64,
    pub temperature: f64,
    pub support: KdSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuxTerm {
    pub aggregation: Aggregation,
    pub coeff: f64,
}

/// `main + kd.coeff * KD + aux.coeff * AUX`, any term may be absent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Objective {
    pub main: Option<Aggregation>,
    pub kd: Option<KdTerm>,
    pub aux: Option<AuxTerm>,
}

impl Objective {
    pub fn main_only(aggregation: Aggregation) -> Self {
        Objective { main: Some(aggregation), ..Default::default() }
    }
}

/// Gradient of the objective with respect to every trainable parameter,
/// shaped like the parameters themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Option<Dense>,
    pub head: Dense,
    pub aux: Option<Dense>,
}

impl Gradients {
    /// All entries in parameter order: hidden weight, hidden bias, head
    /// weight, head bias, aux weight, aux bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.hidden.iter().chain(std::iter::once(&self.head)).chain(&self.aux) {
            out.extend(d.weight.iter());
            out.extend(d.bias.iter());
        }
        out
    }

    pub(crate) fn zeros_like(&self) -> Gradients {
        let z = |d: &Dense| Dense::zeros(d.outputs(), d.inputs());
        Gradients { hidden: self.hidden.as_ref().map(z), head: z(&self.head), aux: self.aux.as_ref().map(z) }
    }

    pub(crate) fn same_shape(&self, other: &Gradients) -> bool {
        fn eq(a: &Dense, b: &Dense) -> bool {
            a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim()
        }
        let opt = |a: &Option<Dense>, b: &Option<Dense>| match (a, b) {
            (Some(a), Some(b)) => eq(a, b),
            (None, None) => true,
            _ => false,
        };
        eq(&self.head, &other.head) && opt(&self.hidden, &other.hidden) && opt(&self.aux, &other.aux)
    }
}

/// Loss value plus its gradients with respect to the student logits
/// (`B x C`) and, when an auxiliary term is active, the auxiliary logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradients {
    pub loss: f64,
    pub logits: Array2<f64>,
    pub aux: Option<Array2<f64>>,
}

fn finite(value: f64, term: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss { term })
    }
}

/// Composes the objective on a batch view and accumulates the per-sample
/// weighted term gradients into logit gradients.
pub fn logit_gradients(view: &BatchView, objective: &Objective) -> Result<LogitGradients> {
    let (b, c) = view.logits.dim();
    let mut dz = Array2::zeros((b, c));
    let mut loss = 0.0;

    if let Some(aggregation) = objective.main {
        let agg = losses::main_loss(view, aggregation);
        loss += finite(agg.value, "ce")?;
        for (i, (&w, &y)) in agg.weights.iter().zip(view.labels).enumerate() {
            let g = losses::ce_logit_grad(view.logits.row(i), y);
            dz.row_mut(i).scaled_add(w, &g);
        }
    }

    if let Some(kd) = objective.kd {
        let teacher = view.teacher_logits.ok_or(Error::MissingTeacher)?;
        let agg = losses::kd_loss(view, kd.kind, kd.temperature, kd.support)?;
        loss += kd.coeff * finite(agg.value, "kd")?;
        for (i, &w) in agg.weights.iter().enumerate().filter(|(_, &w)| w != 0.0) {
            let g = losses::kd_logit_grad(view.logits.row(i), teacher.row(i), kd.temperature, kd.support);
            dz.row_mut(i).scaled_add(kd.coeff * w, &g);
        }
    }

    let mut da = None;
    if let Some(term) = objective.aux {
        let aux = view.aux_logits.ok_or(Error::MissingAuxLogits)?;
        let agg = losses::aux_loss(view, term.aggregation)?;
        loss += term.coeff * finite(agg.value, "aux")?;
        let targets = view.step_relative_labels();
        let mut g_aux = Array2::zeros(aux.dim());
        for (i, (&w, &t)) in agg.weights.iter().zip(&targets).enumerate() {
            let g = losses::ce_logit_grad(aux.row(i), t);
            g_aux.row_mut(i).scaled_add(term.coeff * w, &g);
        }
        da = Some(g_aux);
    }

    Ok(LogitGradients { loss: finite(loss, "total")?, logits: dz, aux: da })
}

/// Analytic gradients of `objective` on `batch` (labels in arrival order).
///
/// The old-class count comes from the teacher when present, otherwise from
/// the auxiliary head (`C - |C_t|`), otherwise it is zero.
pub fn backward(
    model: &ClassifierModel,
    batch: &[&LabeledExample],
    objective: &Objective,
    teacher: Option<&TeacherSnapshot>,
    aux: Option<&AuxHead>,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let c = model.num_classes();
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    if let Some(&label) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::LabelOutOfRange { label, classes: c });
    }
    let old_classes = match (teacher, aux) {
        (Some(t), Some(a)) if t.num_classes() + a.step_classes() != c => {
            return Err(Error::InvalidArgument(format!(
                "teacher ({}) and auxiliary head ({}) do not add up to {c} classes",
                t.num_classes(),
                a.step_classes()
            )))
        }
        (Some(t), _) => t.num_classes(),
        (None, Some(a)) => c.checked_sub(a.step_classes()).ok_or_else(|| {
            Error::InvalidArgument(format!("auxiliary head spans {} classes, model has {c}", a.step_classes()))
        })?,
        (None, None) => 0,
    };
    if let Some(a) = aux {
        if a.layer.inputs() != model.feature_dim() {
            return Err(Error::DimensionMismatch { expected: model.feature_dim(), got: a.layer.inputs() });
        }
    }

    let x = stack_features(batch, model.input_dim())?;
    let h = model.features_batch(x.view())?;
    let z = model.head.apply(h.view());
    let teacher_logits = teacher.map(|t| t.logits_batch(x.view())).transpose()?;
    let aux_logits = aux.map(|a| a.layer.apply(h.view()));

    let mut view = BatchView::new(z.view(), &labels, old_classes, c - old_classes);
    if let Some(t) = &teacher_logits {
        view = view.with_teacher(t.view());
    }
    if let Some(a) = &aux_logits {
        view = view.with_aux(a.view());
    }
    let lg = logit_gradients(&view, objective)?;

    let head = Dense { weight: lg.logits.t().dot(&h), bias: lg.logits.sum_axis(Axis(0)) };
    let mut dh = lg.logits.dot(&model.head.weight);
    let aux_grad = match (aux, &lg.aux) {
        (Some(a), Some(da)) => {
            dh += &da.dot(&a.layer.weight);
            Some(Dense { weight: da.t().dot(&h), bias: da.sum_axis(Axis(0)) })
        }
        (Some(a), None) => Some(Dense::zeros(a.layer.outputs(), a.layer.inputs())),
        _ => None,
    };
    let hidden = model.hidden.as_ref().map(|_| {
        let mut dpre = dh;
        Zip::from(&mut dpre).and(&h).for_each(|g, &f| *g *= 1.0 - f * f);
        Dense { weight: dpre.t().dot(&x), bias: dpre.sum_axis(Axis(0)) }
    });
    Ok((lg.loss, Gradients { hidden, head, aux: aux_grad }))
}
