use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ffcil::harness::{
    self, apply_override, check_output_dir, comparison_block, parse_config, read_reports, write_summary,
    ExperimentConfig, SweepOutcome,
};
use ffcil::schedule::{generate_schedule, validate_schedule, IncrementSchedule, ScheduleKind, ScheduleSpec};

#[derive(Parser)]
#[command(name = "ffcil", version, about = "Free-flow class-incremental learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a class-increment schedule, or inspect one from a file.
    Schedule(ScheduleArgs),
    /// Run the configured preset for every seed.
    Run(RunArgs),
    /// Run the preset x protocol x seed grid and write the comparison.
    Sweep(RunArgs),
    /// Re-aggregate and schema-check the reports in a directory.
    Report {
        /// Directory holding run reports.
        dir: PathBuf,
    },
    /// Print the effective config with every default filled in.
    Config(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Set any config key, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    base: ConfigArgs,
    /// Run a single seed instead of `experiment.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; takes precedence over the environment and config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Schedule kind (equal, ascending, descending, fluctuating, extreme, explicit).
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ScheduleArgs {
    /// Validate and summarize a schedule file instead of generating one.
    #[arg(long, value_name = "FILE")]
    inspect: Option<PathBuf>,
    #[arg(long, default_value = "fluctuating")]
    kind: String,
    #[arg(long, default_value_t = 20)]
    total: usize,
    #[arg(long, default_value_t = 4)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    min: usize,
    /// Defaults to the total.
    #[arg(long)]
    max: Option<usize>,
    /// Comma-separated counts for the explicit kind.
    #[arg(long, value_delimiter = ',')]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Schedule(a) => schedule(a),
        Command::Run(a) => {
            let (config, base) = load(&a)?;
            let outcome = harness::run_single(&config, &base)?;
            finish(&outcome)
        }
        Command::Sweep(a) => {
            let (config, base) = load(&a)?;
            let outcome = harness::run_sweep(&config, &base)?;
            finish(&outcome)?;
            print!("{}", comparison_block(&outcome.summary));
            Ok(())
        }
        Command::Report { dir } => report(&dir),
        Command::Config(a) => {
            let (config, _) = load_base(&a)?;
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}

fn load_base(a: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let (mut text, base) = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (text, base)
        }
        None => (String::new(), PathBuf::from(".")),
    };
    for o in &a.overrides {
        let Some((key, value)) = o.split_once('=') else { bail!("--set expects KEY=VALUE, got `{o}`") };
        text = apply_override(&text, key.trim(), value.trim())?;
    }
    let config = parse_config(&text).with_context(|| match &a.config {
        Some(p) => format!("invalid config {}", p.display()),
        None => "invalid config".to_string(),
    })?;
    Ok((config, base))
}

fn load(a: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut extra = a.base.overrides.clone();
    if let Some(seed) = a.seed {
        extra.push(format!("experiment.seeds=[{seed}]"));
    }
    if let Some(p) = &a.preset {
        extra.push(format!("method.preset=\"{p}\""));
    }
    if let Some(k) = &a.schedule {
        extra.push(format!("schedule.kind=\"{k}\""));
    }
    if let Some(j) = a.jobs {
        extra.push(format!("experiment.jobs={j}"));
    }
    let (mut config, base) = load_base(&ConfigArgs { config: a.base.config.clone(), overrides: extra })?;
    if let Some(out) = &a.out {
        // An explicit flag beats the environment override.
        std::env::remove_var(harness::OUT_DIR_ENV);
        config.experiment.out_dir = out.display().to_string();
    }
    Ok((config, base))
}

fn finish(outcome: &SweepOutcome) -> Result<()> {
    for (stem, r) in &outcome.reports {
        let forgetting = r.forgetting.map_or("-".to_string(), |f| format!("{f:.4}"));
        println!("{stem}: A_T = {:.4}, forgetting = {forgetting}", r.final_accuracy);
    }
    for f in &outcome.failures {
        eprintln!("{}: FAILED: {}", f.stem, f.error);
    }
    println!("wrote {} report(s) to {}", outcome.reports.len(), outcome.out_dir.display());
    if outcome.reports.is_empty() {
        bail!("every run failed");
    }
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let reports = read_reports(dir)?;
    if reports.is_empty() {
        bail!("no reports in {}", dir.display());
    }
    let rows = write_summary(dir, &reports)?;
    let checked = check_output_dir(dir)?;
    print!("{}", comparison_block(&rows));
    println!("{} report(s) aggregated, {checked} file(s) pass the schema check", reports.len());
    Ok(())
}

fn schedule(a: ScheduleArgs) -> Result<()> {
    let s = match &a.inspect {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let s = IncrementSchedule::from_text(&text)?;
            if let Err(v) = validate_schedule(&s, s.total()) {
                bail!("{}: {v}", path.display());
            }
            s
        }
        None => {
            let kind: ScheduleKind = a.kind.parse()?;
            let spec = if kind == ScheduleKind::Explicit {
                if a.counts.is_empty() {
                    bail!("--counts is required for the explicit kind");
                }
                ScheduleSpec::explicit(a.counts.clone())
            } else {
                ScheduleSpec::new(kind, a.total, a.steps).with_bounds(a.min, a.max.unwrap_or(a.total))
            };
            generate_schedule(&spec.with_seed(a.seed))?
        }
    };
    print!("{}", s.to_text());
    eprintln!("{} steps, {} classes, counts {:?}", s.num_steps(), s.total(), s.counts);
    Ok(())
}
