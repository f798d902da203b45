//! Two-layer tanh classifier with an expanding softmax head.
//!
//! `x -> tanh(W1 x + b1) -> W f + b`. With hidden width 0 the hidden layer is
//! skipped and the head reads the raw input. The head gains rows as classes
//! arrive; a frozen copy serves as the distillation teacher and an optional
//! per-step auxiliary head classifies "old vs each new class".

mod backward;
mod checkpoint;
mod sgd;

pub use backward::{backward, logit_gradients, AuxTerm, Gradients, KdTerm, LogitGradients, Objective};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use sgd::Sgd;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::losses::softmax;
use crate::rng;

/// Affine map `y = W x + b` with one weight row per output.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Dense { weight: Array2::zeros((outputs, inputs)), bias: Array1::zeros(outputs) }
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    /// Row-wise application to a `B x inputs` batch.
    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    Zero,
    /// Uniform in `[-0.01, 0.01]`.
    #[default]
    SmallUniform,
}

const HEAD_INIT_RANGE: f64 = 0.01;

fn init_rows(rows: usize, cols: usize, init: HeadInit, rng: &mut rng::Rng) -> Array2<f64> {
    match init {
        HeadInit::Zero => Array2::zeros((rows, cols)),
        HeadInit::SmallUniform => {
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-HEAD_INIT_RANGE..=HEAD_INIT_RANGE))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    input_dim: usize,
    pub hidden: Option<Dense>,
    pub head: Dense,
}

impl ClassifierModel {
    /// A model with no classes yet. Hidden weights are seeded uniform in
    /// `±1/sqrt(input_dim)`; `hidden_width == 0` disables the hidden layer.
    pub fn new(input_dim: usize, hidden_width: usize, seed: u64) -> Self {
        let hidden = (hidden_width > 0).then(|| {
            let mut r = rng::stream(seed, "model/hidden", &[]);
            let bound = 1.0 / (input_dim as f64).sqrt();
            Dense {
                weight: Array2::from_shape_simple_fn((hidden_width, input_dim), || r.random_range(-bound..=bound)),
                bias: Array1::zeros(hidden_width),
            }
        });
        let feat = if hidden_width > 0 { hidden_width } else { input_dim };
        ClassifierModel { input_dim, hidden, head: Dense::zeros(0, feat) }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.head.inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs()
    }

    pub fn is_finite(&self) -> bool {
        self.head.is_finite() && self.hidden.as_ref().is_none_or(Dense::is_finite)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got });
        }
        Ok(())
    }

    /// Hidden features for a `B x d` batch.
    pub fn features_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        Ok(match &self.hidden {
            Some(h) => h.apply(x).mapv_into(f64::tanh),
            None => x.to_owned(),
        })
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.features_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let f = self.features_batch(x)?;
        Ok(self.head.apply(f.view()))
    }

    /// Logits and softmax probabilities for one input.
    pub fn forward(&self, x: &[f64]) -> Result<(Array1<f64>, Array1<f64>)> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let logits = self.logits_batch(x)?.index_axis_move(Axis(0), 0);
        let probs = softmax(logits.view());
        Ok((logits, probs))
    }

    /// Argmax class for each example (ties to the lowest index).
    pub fn predict(&self, examples: &[&LabeledExample]) -> Result<Vec<usize>> {
        let x = stack_features(examples, self.input_dim)?;
        let logits = self.logits_batch(x.view())?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                    .0
            })
            .collect())
    }

    /// Appends `num_new` head rows; existing rows and biases are untouched.
    /// New biases start at zero.
    pub fn expand_head(&mut self, num_new: usize, init: HeadInit, seed: u64) -> Result<()> {
        if num_new == 0 {
            return Err(Error::InvalidArgument("expand_head needs at least one new class".into()));
        }
        let c = self.num_classes();
        let mut r = rng::stream(seed, "model/head", &[c as u64]);
        let rows = init_rows(num_new, self.feature_dim(), init, &mut r);
        self.head
            .weight
            .append(Axis(0), rows.view())
            .expect("new rows share the feature dimension");
        self.head.bias.append(Axis(0), Array1::zeros(num_new).view()).expect("1-d append");
        Ok(())
    }

    pub fn snapshot(&self) -> TeacherSnapshot {
        TeacherSnapshot { model: self.clone() }
    }
}

/// Stacks example features into a `B x dim` matrix.
pub fn stack_features(examples: &[&LabeledExample], dim: usize) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((examples.len(), dim));
    for (mut row, e) in x.rows_mut().into_iter().zip(examples) {
        if e.features.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: e.features.len() });
        }
        row.assign(&ndarray::aview1(&e.features));
    }
    Ok(x)
}

/// A frozen copy of the student taken before a step begins.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSnapshot {
    model: ClassifierModel,
}

impl TeacherSnapshot {
    pub fn num_classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn logits_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.model.logits_batch(x)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Array1<f64>, Array1<f64>)> {
        self.model.forward(x)
    }
}

/// `(|C_t| + 1)`-way head on the shared features; row 0 is "any old class".
#[derive(Debug, Clone, PartialEq)]
pub struct AuxHead {
    pub layer: Dense,
}

impl AuxHead {
    pub fn new(step_classes: usize, feature_dim: usize, init: HeadInit, seed: u64) -> Self {
        let mut r = rng::stream(seed, "model/aux", &[step_classes as u64]);
        AuxHead {
            layer: Dense {
                weight: init_rows(step_classes + 1, feature_dim, init, &mut r),
                bias: Array1::zeros(step_classes + 1),
            },
        }
    }

    pub fn step_classes(&self) -> usize {
        self.layer.outputs() - 1
    }
}
