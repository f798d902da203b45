//! Report files, the summary table, the comparison block and schema checks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::Protocol;
use crate::error::{Error, Result};
use crate::metrics::{RunReport, REPORT_FORMAT};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const COMPARISON_FILE: &str = "comparison.txt";
pub const FAILURES_FILE: &str = "failures.csv";
pub const TIMING_SUFFIX: &str = ".timing.json";
pub const SUMMARY_COLUMNS: [&str; 7] = ["preset", "protocol", "schedule_kind", "seed", "A_T", "forgetting", "wall_ms"];

/// Per-step wall-clock, stored next to each report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub preset: String,
    pub protocol: String,
    pub schedule_kind: String,
    pub seed: u64,
    #[serde(rename = "A_T")]
    pub final_accuracy: f64,
    pub forgetting: Option<f64>,
    pub wall_ms: f64,
}

impl SummaryRow {
    pub fn from_report(report: &RunReport) -> Self {
        SummaryRow {
            preset: report.method.name.to_string(),
            protocol: report.protocol.clone(),
            schedule_kind: report.schedule_kind.clone(),
            seed: report.seed,
            final_accuracy: report.final_accuracy,
            forgetting: report.forgetting,
            wall_ms: report.total_wall_ms(),
        }
    }
}

/// Writes `<stem>.json` and its timing sidecar.
pub fn write_report(dir: &Path, stem: &str, report: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.json")), report.to_json())?;
    let timing = Timing { wall_ms: report.wall_ms.clone() };
    std::fs::write(
        dir.join(format!("{stem}{TIMING_SUFFIX}")),
        serde_json::to_string_pretty(&timing).expect("timing serializes") + "\n",
    )?;
    Ok(())
}

/// Reads every report in `dir` (sorted by file name), attaching timing
/// sidecars when present.
pub fn read_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_report_path(p))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            let mut report = RunReport::from_json(&text)
                .map_err(|e| Error::Schema { file: p.display().to_string(), message: e.to_string() })?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let timing = p.with_file_name(format!("{stem}{TIMING_SUFFIX}"));
            if let Ok(t) = std::fs::read_to_string(&timing) {
                if let Ok(t) = serde_json::from_str::<Timing>(&t) {
                    report.wall_ms = t.wall_ms;
                }
            }
            Ok(report)
        })
        .collect()
}

fn is_report_path(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.ends_with(".json") && !name.ends_with(TIMING_SUFFIX)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.preset.clone(),
            r.protocol.clone(),
            r.schedule_kind.clone(),
            r.seed.to_string(),
            r.final_accuracy.to_string(),
            r.forgetting.map(|f| f.to_string()).unwrap_or_default(),
            format!("{:.3}", r.wall_ms),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed statistics of one (preset, protocol) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub runs: usize,
    pub accuracy: (f64, f64),
    pub forgetting: Option<(f64, f64)>,
}

pub fn cell_stats(rows: &[&SummaryRow]) -> CellStats {
    let acc: Vec<f64> = rows.iter().map(|r| r.final_accuracy).collect();
    let fgt: Vec<f64> = rows.iter().filter_map(|r| r.forgetting).collect();
    CellStats {
        runs: rows.len(),
        accuracy: mean_std(&acc),
        forgetting: (!fgt.is_empty()).then(|| mean_std(&fgt)),
    }
}

fn delta(value: f64) -> String {
    let arrow = match value.partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Less) => "↓",
        Some(std::cmp::Ordering::Greater) => "↑",
        _ => "=",
    };
    format!("{value:+.4} {arrow}")
}

/// Table of mean ± std per (preset, protocol), with accuracy deltas
/// FF.org − Equ.T and FF.ours − FF.org.
pub fn comparison_block(rows: &[SummaryRow]) -> String {
    let mut cells: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.preset.clone(), r.protocol.clone())).or_default().push(r);
    }
    let mut presets: Vec<&String> = cells.keys().map(|k| &k.0).collect();
    presets.dedup();

    let mut out = String::new();
    writeln!(out, "{:<12} {:<8} {:>4}  {:<17}  {:<17}  delta A_T", "preset", "protocol", "runs", "A_T", "forgetting")
        .unwrap();
    for preset in presets {
        let stat = |p: Protocol| cells.get(&(preset.clone(), p.as_str().to_string())).map(|c| cell_stats(c));
        let mut protocols: Vec<String> = cells.keys().filter(|k| &k.0 == preset).map(|k| k.1.clone()).collect();
        protocols.sort_by_key(|p| p.parse::<Protocol>().map_or(usize::MAX, |p| p as usize));
        for name in protocols {
            let s = cell_stats(&cells[&(preset.clone(), name.clone())]);
            let (label, reference) = match name.parse::<Protocol>() {
                Ok(p @ Protocol::FfOrg) => (p.label(), stat(Protocol::Equ)),
                Ok(p @ Protocol::FfOurs) => (p.label(), stat(Protocol::FfOrg)),
                Ok(p) => (p.label(), None),
                Err(_) => (name.as_str(), None),
            };
            let fgt = s.forgetting.map_or("-".to_string(), |(m, sd)| format!("{m:.4} ± {sd:.4}"));
            let d = reference.map_or(String::new(), |r| delta(s.accuracy.0 - r.accuracy.0));
            writeln!(
                out,
                "{:<12} {:<8} {:>4}  {:<17}  {:<17}  {}",
                preset,
                label,
                s.runs,
                format!("{:.4} ± {:.4}", s.accuracy.0, s.accuracy.1),
                fgt,
                d
            )
            .unwrap();
        }
    }
    out
}

/// Writes the summary table and comparison block for `reports`.
pub fn write_summary(dir: &Path, reports: &[RunReport]) -> Result<Vec<SummaryRow>> {
    std::fs::create_dir_all(dir)?;
    let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::from_report).collect();
    std::fs::write(dir.join(SUMMARY_FILE), summary_csv(&rows))?;
    std::fs::write(dir.join(COMPARISON_FILE), comparison_block(&rows))?;
    Ok(rows)
}

fn schema(file: &str, message: impl Into<String>) -> Error {
    Error::Schema { file: file.to_string(), message: message.into() }
}

/// Checks a run report against the documented layout.
pub fn validate_report_json(file: &str, text: &str) -> Result<()> {
    let v: Value = serde_json::from_str(text).map_err(|e| schema(file, e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| schema(file, "top level is not an object"))?;
    if obj.get("format").and_then(Value::as_str) != Some(REPORT_FORMAT) {
        return Err(schema(file, format!("`format` must be \"{REPORT_FORMAT}\"")));
    }
    let expect = |key: &str, ok: fn(&Value) -> bool, what: &str| -> Result<()> {
        match obj.get(key) {
            Some(v) if ok(v) => Ok(()),
            Some(_) => Err(schema(file, format!("`{key}` must be {what}"))),
            None => Err(schema(file, format!("missing `{key}`"))),
        }
    };
    expect("config", |v| v.is_string() || v.is_null(), "a string or null")?;
    expect("protocol", Value::is_string, "a string")?;
    expect("seed", Value::is_u64, "an unsigned integer")?;
    expect("schedule_kind", Value::is_string, "a string")?;
    expect("schedule", Value::is_string, "a string")?;
    expect("counts", |v| v.as_array().is_some_and(|a| !a.is_empty() && a.iter().all(Value::is_u64)), "a non-empty integer array")?;
    expect("method", Value::is_object, "an object")?;
    expect("train", Value::is_object, "an object")?;
    expect("final_accuracy", is_unit, "a number in [0, 1]")?;
    expect("forgetting", |v| v.is_null() || v.is_number(), "a number or null")?;
    expect("forgetting_first_seen", |v| v.is_null() || v.is_number(), "a number or null")?;
    expect("mean_step_accuracy", is_unit, "a number in [0, 1]")?;
    expect("prediction_bias", |v| v.as_array().is_some_and(|a| a.iter().all(is_unit)), "an array of numbers in [0, 1]")?;
    let steps = obj.get("steps").and_then(Value::as_array).ok_or_else(|| schema(file, "`steps` must be an array"))?;
    let counts = obj["counts"].as_array().map_or(0, Vec::len);
    if steps.len() != counts {
        return Err(schema(file, format!("{} steps but {counts} schedule counts", steps.len())));
    }
    for (t, s) in steps.iter().enumerate() {
        let bad = |m: &str| schema(file, format!("steps[{t}]: {m}"));
        if s.get("step").and_then(Value::as_u64) != Some(t as u64) {
            return Err(bad("`step` out of order"));
        }
        if !s.get("accuracy").is_some_and(is_unit) {
            return Err(bad("`accuracy` must be in [0, 1]"));
        }
        let tasks = s.get("task_accuracies").and_then(Value::as_array).ok_or_else(|| bad("missing `task_accuracies`"))?;
        if tasks.len() != t + 1 || !tasks.iter().all(is_unit) {
            return Err(bad("`task_accuracies` must hold one value in [0, 1] per step so far"));
        }
        let classes = s.get("classes_seen").and_then(Value::as_u64).ok_or_else(|| bad("missing `classes_seen`"))?;
        let conf = s.get("confusion").and_then(Value::as_array).ok_or_else(|| bad("missing `confusion`"))?;
        let square = conf.len() as u64 == classes
            && conf.iter().all(|r| r.as_array().is_some_and(|r| r.len() as u64 == classes && r.iter().all(Value::is_u64)));
        if !square {
            return Err(bad("`confusion` must be a square count matrix over seen classes"));
        }
        for key in ["alignment_scale", "final_epoch_loss"] {
            if !s.get(key).is_some_and(Value::is_number) {
                return Err(bad(&format!("`{key}` must be a number")));
            }
        }
    }
    let last = steps.last().and_then(|s| s.get("accuracy")).and_then(Value::as_f64);
    if last != obj["final_accuracy"].as_f64() {
        return Err(schema(file, "`final_accuracy` differs from the last step's accuracy"));
    }
    Ok(())
}

fn is_unit(v: &Value) -> bool {
    v.as_f64().is_some_and(|x| (0.0..=1.0).contains(&x))
}

/// Checks a summary table: exact header, typed columns.
pub fn validate_summary_csv(file: &str, text: &str) -> Result<()> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| schema(file, e.to_string()))?;
    if header.iter().ne(SUMMARY_COLUMNS) {
        return Err(schema(file, format!("header must be {}", SUMMARY_COLUMNS.join(","))));
    }
    for (i, rec) in r.deserialize::<SummaryRow>().enumerate() {
        let row = rec.map_err(|e| schema(file, format!("row {}: {e}", i + 1)))?;
        if !(0.0..=1.0).contains(&row.final_accuracy) || row.wall_ms < 0.0 {
            return Err(schema(file, format!("row {}: value out of range", i + 1)));
        }
    }
    Ok(())
}

/// Validates every report and summary file in `dir`; returns how many files
/// were checked.
pub fn check_output_dir(dir: &Path) -> Result<usize> {
    let mut checked = 0;
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if is_report_path(&p) {
            validate_report_json(&name, &std::fs::read_to_string(&p)?)?;
            checked += 1;
        } else if name == SUMMARY_FILE {
            validate_summary_csv(&name, &std::fs::read_to_string(&p)?)?;
            checked += 1;
        } else if name.ends_with(TIMING_SUFFIX) {
            serde_json::from_str::<Timing>(&std::fs::read_to_string(&p)?).map_err(|e| schema(&name, e.to_string()))?;
            checked += 1;
        }
    }
    Ok(checked)
}
