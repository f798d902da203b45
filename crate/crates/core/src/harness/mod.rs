//! Config parsing, sweeps and report persistence.

pub mod config;
pub mod report;
pub mod sweep;

pub use config::{
    apply_override, parse_config, DatasetKind, ExperimentConfig, Protocol, RunSpec, Variant, OUT_DIR_ENV,
};
pub use report::{check_output_dir, comparison_block, read_reports, write_summary, SummaryRow};
pub use sweep::{execute, run_single, run_specs, run_sweep, SweepOutcome};
