//! Synthetic class-conditional datasets and their per-step partitions.

mod buffer;
mod io;

pub use buffer::{epoch_batches, ReplayBuffer, Selection};
pub use io::{read_matrix, write_matrix};

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::IncrementSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        LabeledExample { features, label }
    }
}

/// A full dataset before it is cut into steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSource {
    pub num_classes: usize,
    pub dim: usize,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Per-step train and test sets, labels unchanged from the source.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub dim: usize,
    pub train: Vec<Vec<LabeledExample>>,
    pub test: Vec<Vec<LabeledExample>>,
}

impl DatasetSource {
    /// Builds a source from imported train and test matrices.
    pub fn from_parts(train: Vec<LabeledExample>, test: Vec<LabeledExample>) -> Result<Self> {
        let dim = train
            .first()
            .or(test.first())
            .map(|e| e.features.len())
            .ok_or_else(|| Error::InvalidArgument("dataset has no examples".into()))?;
        for e in train.iter().chain(&test) {
            if e.features.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: e.features.len() });
            }
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("non-finite feature for label {}", e.label)));
            }
        }
        let num_classes = train.iter().chain(&test).map(|e| e.label + 1).max().unwrap_or(0);
        Ok(DatasetSource { num_classes, dim, train, test })
    }
}

/// Isotropic unit-variance Gaussian classes. Class means are seeded random
/// unit directions scaled by `separation`; directions are orthonormalized in
/// blocks of `dim`, so with `num_classes <= dim` every pair of means sits at
/// distance `separation * sqrt(2)`.
pub fn make_gaussian_dataset(
    num_classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<DatasetSource> {
    if num_classes == 0 || train_per_class == 0 || test_per_class == 0 {
        return Err(Error::InvalidArgument("dataset counts must be positive".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("dim must be at least 2, got {dim}")));
    }
    if !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::InvalidArgument(format!("separation must be non-negative, got {separation}")));
    }
    let mut rng = rng::stream(seed, "data/gaussian", &[]);
    let mut draw = |n: usize| -> Array1<f64> {
        Array1::from_iter((0..n).map(|_| StandardNormal.sample(&mut rng)))
    };

    let mut directions: Vec<Array1<f64>> = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let block_start = c - c % dim;
        let mut v = draw(dim);
        for u in &directions[block_start..] {
            v = &v - &(u * u.dot(&v));
        }
        let norm = v.dot(&v).sqrt();
        directions.push(v / norm);
    }
    let centers: Vec<Array1<f64>> = directions.into_iter().map(|u| u * separation).collect();

    let mut train = Vec::with_capacity(num_classes * train_per_class);
    let mut test = Vec::with_capacity(num_classes * test_per_class);
    for (label, center) in centers.iter().enumerate() {
        for i in 0..train_per_class + test_per_class {
            let x = center + &draw(dim);
            let e = LabeledExample::new(x.to_vec(), label);
            if i < train_per_class {
                train.push(e);
            } else {
                test.push(e);
            }
        }
    }
    Ok(DatasetSource { num_classes, dim, train, test })
}

/// Routes every example to the step that introduces its class.
pub fn split_by_schedule(source: &DatasetSource, schedule: &IncrementSchedule) -> Result<DatasetSplit> {
    if schedule.total() != source.num_classes {
        return Err(Error::ClassCountMismatch {
            schedule: schedule.total(),
            dataset: source.num_classes,
        });
    }
    let step_of = schedule.step_of_class();
    let steps = schedule.num_steps();
    let route = |set: &[LabeledExample]| -> Result<Vec<Vec<LabeledExample>>> {
        let mut out = vec![Vec::new(); steps];
        for e in set {
            let t = *step_of.get(&e.label).ok_or(Error::LabelOutOfRange {
                label: e.label,
                classes: source.num_classes,
            })?;
            out[t].push(e.clone());
        }
        Ok(out)
    };
    Ok(DatasetSplit {
        dim: source.dim,
        train: route(&source.train)?,
        test: route(&source.test)?,
    })
}
