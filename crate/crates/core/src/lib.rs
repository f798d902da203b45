//! A desk-scale laboratory for free-flow class-incremental learning.
//!
//! Class streams with arbitrary per-step increments are generated and
//! validated by [`schedule`], turned into per-step synthetic datasets by
//! [`data`], and learned by a small two-layer classifier ([`model`]) trained
//! under the objectives in [`losses`]. [`alignment`] applies post-hoc weight
//! alignment after each step, [`trainer`] orchestrates whole runs, [`metrics`]
//! scores them, and [`harness`] handles configuration, sweeps and reports.

pub mod alignment;
pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
