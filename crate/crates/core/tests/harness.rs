use std::path::Path;

use ffcil::alignment::AlignmentMode;
use ffcil::harness::config::{ExperimentSection, SweepSection};
use ffcil::harness::report::{validate_report_json, validate_summary_csv, SUMMARY_COLUMNS, SUMMARY_FILE};
use ffcil::harness::{
    apply_override, check_output_dir, parse_config, read_reports, run_specs, ExperimentConfig, Protocol, OUT_DIR_ENV,
};
use ffcil::metrics::{accuracy_from_confusion, average_forgetting, ForgettingVariant};
use ffcil::schedule::ScheduleKind;
use ffcil::trainer::PresetName;
use ffcil::Error;
use proptest::prelude::*;

fn config_strategy() -> impl Strategy<Value = ExperimentConfig> {
    (
        (6usize..40, 2usize..32, 1usize..100, 0.0..10.0f64),
        prop::sample::select(vec![ScheduleKind::Equal, ScheduleKind::Ascending, ScheduleKind::Fluctuating]),
        (1usize..6, prop::option::of(0usize..10)),
        prop::sample::select(PresetName::ALL.to_vec()),
        (prop::option::of(prop::sample::select(vec![AlignmentMode::None, AlignmentMode::Wa, AlignmentMode::Diwa])), 0.0..=1.0f64, 0.1..20.0f64),
        (1usize..20, 1usize..128, 1e-4..1.0f64, 0.0..0.99f64, prop_oneof![Just(0usize), 40usize..500]),
        prop::collection::vec(any::<u64>(), 1..5),
        prop::collection::vec(prop::sample::select(Protocol::ALL.to_vec()), 1..4),
    )
        .prop_map(|(data, kind, (steps, max), preset, (mode, eta_min, tau), train, seeds, protocols)| {
            let mut c = ExperimentConfig::default();
            (c.dataset.num_classes, c.dataset.dim, c.dataset.train_per_class, c.dataset.separation) = data;
            c.schedule.kind = kind;
            c.schedule.num_steps = steps;
            // Any cap that keeps the schedule feasible.
            c.schedule.max_per_step = max.map(|extra| c.dataset.num_classes.div_ceil(steps) + extra);
            c.method.preset = preset;
            c.alignment.mode = mode;
            c.alignment.eta_min = eta_min;
            c.alignment.tau = tau;
            (c.train.epochs, c.train.batch_size, c.train.lr, c.train.momentum, c.train.buffer_budget) = train;
            c.experiment = ExperimentSection { seeds, ..Default::default() };
            c.sweep = SweepSection { presets: vec![], protocols };
            c
        })
}

proptest! {
    #[test]
    fn configs_round_trip_through_toml(c in config_strategy()) {
        prop_assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides_land_on_the_named_key(epochs in 1usize..1000, eta in 0.0..=1.0f64) {
        let text = apply_override("", "train.epochs", &epochs.to_string()).unwrap();
        let text = apply_override(&text, "alignment.eta_min", &format!("{eta:?}")).unwrap();
        let c = parse_config(&text).unwrap();
        prop_assert_eq!(c.train.epochs, epochs);
        prop_assert_eq!(c.alignment.eta_min, eta);
    }

    /// Accuracy from the confusion matrix equals counting hits directly.
    #[test]
    fn accuracy_matches_direct_counting(pairs in prop::collection::vec((0usize..6, 0usize..6), 1..200)) {
        let mut confusion = vec![vec![0usize; 6]; 6];
        for &(y, p) in &pairs {
            confusion[y][p] += 1;
        }
        let direct = pairs.iter().filter(|(y, p)| y == p).count() as f64 / pairs.len() as f64;
        prop_assert!((accuracy_from_confusion(&confusion) - direct).abs() < 1e-12);
    }

    /// The max-over-history reference is never below the first-seen one.
    #[test]
    fn forgetting_orders_its_variants(acc in (2usize..7).prop_flat_map(|t| {
        (0..t).map(|i| prop::collection::vec(0.0..=1.0f64, i + 1)).collect::<Vec<_>>()
    })) {
        let max = average_forgetting(&acc, ForgettingVariant::MaxOverHistory).unwrap();
        let first = average_forgetting(&acc, ForgettingVariant::FirstSeen).unwrap();
        prop_assert!(max >= first - 1e-12);
    }

    /// Repeating the final accuracies one step later adds a zero drop for
    /// the newly old task and clamps every earlier drop at zero, since the
    /// repeated row joins the reference window.
    #[test]
    fn repeating_the_last_row_keeps_old_drops(acc in (2usize..6).prop_flat_map(|t| {
        (0..t).map(|i| prop::collection::vec(0.0..=1.0f64, i + 1)).collect::<Vec<_>>()
    }), extra in 0.0..=1.0f64) {
        let t = acc.len();
        let last = &acc[t - 1];
        let expected: f64 = (0..t - 1)
            .map(|j| {
                let best = (j..t - 1).map(|s| acc[s][j]).fold(f64::NEG_INFINITY, f64::max);
                (best - last[j]).max(0.0)
            })
            .sum();
        let mut longer = acc.clone();
        let mut row = acc[t - 1].clone();
        row.push(extra);
        longer.push(row);
        let after = average_forgetting(&longer, ForgettingVariant::MaxOverHistory).unwrap() * t as f64;
        prop_assert!((after - expected).abs() < 1e-12, "{expected} vs {after}");
    }
}

#[test]
fn forgetting_hand_matrices() {
    let acc = vec![vec![0.9], vec![0.7, 0.8]];
    assert!((average_forgetting(&acc, ForgettingVariant::MaxOverHistory).unwrap() - 0.2).abs() < 1e-15);
    let acc = vec![vec![0.5], vec![0.8, 0.9], vec![0.6, 0.4, 0.7]];
    // Task 0: max(0.5, 0.8) - 0.6 = 0.2; task 1: 0.9 - 0.4 = 0.5.
    assert!((average_forgetting(&acc, ForgettingVariant::MaxOverHistory).unwrap() - 0.35).abs() < 1e-15);
    // Task 0: 0.5 - 0.6 = -0.1; task 1: 0.9 - 0.4 = 0.5.
    assert!((average_forgetting(&acc, ForgettingVariant::FirstSeen).unwrap() - 0.2).abs() < 1e-15);
    assert!(matches!(average_forgetting(&acc[..1], ForgettingVariant::MaxOverHistory), Err(Error::TooFewSteps(1))));
}

#[test]
fn diagnostics_name_line_and_key() {
    let cases = [
        ("[alignment]\neta_min = 1.5\n", 2, "alignment.eta_min"),
        ("[train]\nepochs = 2\nlearning_rate = 0.1\n", 3, "learning_rate"),
        ("[train]\nepochs = \"many\"\n", 2, "epochs"),
        ("[experiment]\nseeds = []\n", 2, "experiment.seeds"),
    ];
    for (text, want_line, want_key) in cases {
        match parse_config(text) {
            Err(Error::Config { line, key, .. }) => {
                assert_eq!(line, want_line, "{text}");
                assert!(key.contains(want_key) || want_key.contains(&key), "{key} vs {want_key}");
            }
            other => panic!("{text}: {other:?}"),
        }
    }
}

const TINY: &str = "[dataset]\nnum_classes = 5\ndim = 4\ntrain_per_class = 10\ntest_per_class = 5\n\n[schedule]\ncounts = [2, 1, 2]\nnum_steps = 3\n\n[train]\nepochs = 1\nhidden_width = 3\nbuffer_budget = 10\n\n[experiment]\nseeds = [0, 1]\n\n[sweep]\npresets = [\"replay\", \"aux_expand\"]\n";

#[test]
fn sweep_outputs_pass_the_schema_check() {
    let dir = tempfile::tempdir().unwrap();
    let config = parse_config(TINY).unwrap();
    let specs = config.sweep_runs(5);
    assert_eq!(specs.len(), 2 * 3 * 2);
    let out = run_specs(&config, &specs, dir.path(), dir.path()).unwrap();
    assert!(out.failures.is_empty());
    // Reports, their timing sidecars, the summary and the comparison.
    assert_eq!(check_output_dir(dir.path()).unwrap(), 2 * specs.len() + 1);
    assert!(dir.path().join("comparison.txt").exists());

    let summary = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_COLUMNS.join(","));
    assert_eq!(summary.lines().count(), specs.len() + 1);
    assert_eq!(read_reports(dir.path()).unwrap().len(), specs.len());
}

#[test]
fn schema_check_rejects_damaged_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = parse_config(TINY).unwrap();
    let out = run_specs(&config, &config.sweep_runs(5)[..1], dir.path(), dir.path()).unwrap();
    let json = out.reports[0].1.to_json();
    validate_report_json("r.json", &json).unwrap();

    let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
    value.as_object_mut().unwrap().remove("final_accuracy");
    assert!(matches!(validate_report_json("r.json", &value.to_string()), Err(Error::Schema { .. })));
    assert!(validate_report_json("r.json", &json.replace("ffcil-run-report v1", "v0")).is_err());

    let summary = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    validate_summary_csv("s.csv", &summary).unwrap();
    assert!(validate_summary_csv("s.csv", &summary.replacen("A_T", "acc", 1)).is_err());
    assert!(validate_summary_csv("s.csv", &format!("{summary}replay,equ,equal,x,0.5,,1\n")).is_err());

    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    assert!(check_output_dir(dir.path()).is_err());
}

/// The only test in this binary that touches the environment.
#[test]
fn environment_overrides_the_output_directory() {
    let config = parse_config("[experiment]\nout_dir = \"from-config\"\n").unwrap();
    std::env::remove_var(OUT_DIR_ENV);
    assert_eq!(config.out_dir(), Path::new("from-config"));
    std::env::set_var(OUT_DIR_ENV, "/tmp/from-env");
    assert_eq!(config.out_dir(), Path::new("/tmp/from-env"));
    std::env::set_var(OUT_DIR_ENV, "");
    assert_eq!(config.out_dir(), Path::new("from-config"));
    std::env::remove_var(OUT_DIR_ENV);
}

#[test]
fn imported_matrices_feed_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let source = ffcil::data::make_gaussian_dataset(3, 4, 10, 5, 5.0, 7).unwrap();
    std::fs::write(dir.path().join("train.txt"), ffcil::data::write_matrix(4, &source.train)).unwrap();
    std::fs::write(dir.path().join("test.txt"), ffcil::data::write_matrix(4, &source.test)).unwrap();
    let text = "[dataset]\nkind = \"import\"\ntrain_path = \"train.txt\"\ntest_path = \"test.txt\"\n\n[schedule]\ncounts = [2, 1]\nnum_steps = 2\n\n[train]\nepochs = 1\nbuffer_budget = 6\n\n[sweep]\nprotocols = [\"ff_org\"]\n";
    let config = parse_config(text).unwrap();
    let loaded = config.load_dataset(0, dir.path()).unwrap();
    assert_eq!(loaded.num_classes, 3);
    assert_eq!(loaded.train, source.train);
    let out = run_specs(&config, &config.sweep_runs(3), dir.path(), dir.path()).unwrap();
    assert_eq!(out.reports.len(), 1);
}
