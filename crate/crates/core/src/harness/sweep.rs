//! Executing runs and sweeps.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, RunSpec};
use super::report::{write_report, write_summary, SummaryRow, FAILURES_FILE};
use crate::data::split_by_schedule;
use crate::error::{Error, Result};
use crate::metrics::RunReport;
use crate::schedule::generate_schedule;
use crate::trainer::run_incremental;

/// Executes one resolved run and fills in the report's provenance fields.
pub fn execute(config: &ExperimentConfig, spec: &RunSpec, base_dir: &Path) -> Result<RunReport> {
    let source = config.load_dataset(spec.seed, base_dir)?;
    let mut schedule_spec = spec.schedule.clone();
    schedule_spec.total_classes = source.num_classes;
    if schedule_spec.max_per_step == 0 {
        schedule_spec.max_per_step = source.num_classes;
    }
    let schedule = generate_schedule(&schedule_spec)?;
    let split = split_by_schedule(&source, &schedule)?;
    let mut report = run_incremental(&schedule, &split, &spec.method, &spec.train)?;
    report.config = Some(config.for_run(spec).to_toml());
    report.protocol = spec.protocol.as_str().to_string();
    report.schedule_kind = schedule_spec.kind.to_string();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub stem: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub out_dir: PathBuf,
    pub reports: Vec<(String, RunReport)>,
    pub failures: Vec<Failure>,
    pub summary: Vec<SummaryRow>,
}

/// Runs `specs` on a pool of `config.experiment.jobs` workers, then writes
/// every report, the summary table, the comparison block and (if any run
/// failed) a failure list from the calling thread. A failing run does not
/// stop the others.
pub fn run_specs(config: &ExperimentConfig, specs: &[RunSpec], base_dir: &Path, out_dir: &Path) -> Result<SweepOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.experiment.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<(String, Result<RunReport>)> =
        pool.install(|| specs.par_iter().map(|s| (s.file_stem(), execute(config, s, base_dir))).collect());

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (stem, result) in results {
        match result {
            Ok(r) => {
                write_report(out_dir, &stem, &r)?;
                reports.push((stem, r));
            }
            Err(e) => failures.push(Failure { stem, error: e.to_string() }),
        }
    }
    let all: Vec<RunReport> = reports.iter().map(|(_, r)| r.clone()).collect();
    let summary = write_summary(out_dir, &all)?;
    let failure_path = out_dir.join(FAILURES_FILE);
    if failures.is_empty() {
        if failure_path.exists() {
            std::fs::remove_file(&failure_path)?;
        }
    } else {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "error"]).expect("in-memory write");
        for f in &failures {
            w.write_record([&f.stem, &f.error]).expect("in-memory write");
        }
        std::fs::write(&failure_path, w.into_inner().expect("in-memory flush"))?;
    }
    Ok(SweepOutcome { out_dir: out_dir.to_path_buf(), reports, failures, summary })
}

/// Total class count the config's dataset will have, needed to resolve
/// schedules before any data is loaded.
pub fn class_total(config: &ExperimentConfig, base_dir: &Path) -> Result<usize> {
    Ok(config.load_dataset(config.experiment.seeds.first().copied().unwrap_or(0), base_dir)?.num_classes)
}

/// Every (preset, protocol, seed) run of the config's sweep grid.
pub fn run_sweep(config: &ExperimentConfig, base_dir: &Path) -> Result<SweepOutcome> {
    let specs = config.sweep_runs(class_total(config, base_dir)?);
    run_specs(config, &specs, base_dir, &config.out_dir())
}

/// The configured preset and variant, once per seed.
pub fn run_single(config: &ExperimentConfig, base_dir: &Path) -> Result<SweepOutcome> {
    let specs = config.single_runs(class_total(config, base_dir)?);
    run_specs(config, &specs, base_dir, &config.out_dir())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;
    use crate::harness::report::check_output_dir;

    const SMALL: &str = "[dataset]\nnum_classes = 6\ndim = 4\ntrain_per_class = 12\ntest_per_class = 6\n\n[schedule]\nnum_steps = 3\ncounts = [3, 2, 1]\n\n[train]\nepochs = 2\nhidden_width = 4\nbuffer_budget = 12\n";

    #[test]
    fn one_seed_one_protocol_writes_one_report() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("{SMALL}\n[sweep]\nprotocols = [\"ff_org\"]\n");
        let config = parse_config(&text).unwrap();
        let specs = config.sweep_runs(6);
        let out = run_specs(&config, &specs, dir.path(), dir.path()).unwrap();
        assert_eq!(out.reports.len(), 1);
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".json") && !n.ends_with(".timing.json"))
            .collect();
        assert_eq!(names, vec!["kd_replay__ff_org__seed0.json".to_string()]);
        assert_eq!(check_output_dir(dir.path()).unwrap(), 3);
    }

    #[test]
    fn failures_are_recorded_and_the_sweep_continues() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(&format!("{SMALL}\n[experiment]\nseeds = [0, 1]\n")).unwrap();
        let mut specs = config.sweep_runs(6);
        specs[0].train.lr = f64::NAN;
        let out = run_specs(&config, &specs, dir.path(), dir.path()).unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.reports.len(), specs.len() - 1);
        assert!(dir.path().join(FAILURES_FILE).exists());
    }
}
