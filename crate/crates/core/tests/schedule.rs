use std::collections::HashSet;

use ffcil::schedule::{generate_schedule, validate_schedule, IncrementSchedule, ScheduleKind, ScheduleSpec, ScheduleViolation};
use proptest::prelude::*;

/// A feasible (total, steps, min, max) for the bounded kinds.
fn bounded() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..8, 1usize..4, 0usize..6).prop_flat_map(|(steps, min, extra)| {
        let max = min + extra;
        (steps * min..=steps * max).prop_map(move |total| (total, steps, min, max))
    })
}

fn check_generated(s: &IncrementSchedule, total: usize) -> Result<(), TestCaseError> {
    prop_assert_eq!(validate_schedule(s, total), Ok(()));
    prop_assert_eq!(s.counts.iter().sum::<usize>(), total);
    let mut seen: Vec<usize> = s.class_sets.concat();
    seen.sort_unstable();
    prop_assert_eq!(seen, (0..total).collect::<Vec<_>>());
    Ok(())
}

proptest! {
    #[test]
    fn bounded_kinds_are_valid_and_respect_bounds(
        (total, steps, min, max) in bounded(),
        kind in prop::sample::select(vec![ScheduleKind::Equal, ScheduleKind::Ascending, ScheduleKind::Descending]),
        seed in any::<u64>(),
    ) {
        let spec = ScheduleSpec::new(kind, total, steps).with_bounds(min, max).with_seed(seed);
        let s = generate_schedule(&spec).unwrap();
        check_generated(&s, total)?;
        prop_assert_eq!(s.num_steps(), steps);
        if kind != ScheduleKind::Equal {
            prop_assert!(s.counts.iter().all(|&c| (min..=max).contains(&c)), "{:?}", s.counts);
        }
    }

    #[test]
    fn ascending_is_monotone_and_descending_is_its_reverse(
        (total, steps, min, max) in bounded(),
        seed in any::<u64>(),
    ) {
        let up = generate_schedule(&ScheduleSpec::new(ScheduleKind::Ascending, total, steps).with_bounds(min, max).with_seed(seed)).unwrap();
        let down = generate_schedule(&ScheduleSpec::new(ScheduleKind::Descending, total, steps).with_bounds(min, max).with_seed(seed)).unwrap();
        prop_assert!(up.counts.windows(2).all(|w| w[0] <= w[1]), "{:?}", up.counts);
        let mut rev = down.counts.clone();
        rev.reverse();
        prop_assert_eq!(rev, up.counts);
    }

    #[test]
    fn equal_counts_differ_by_at_most_one(total in 1usize..200, steps in 1usize..20, seed in any::<u64>()) {
        prop_assume!(steps <= total);
        let s = generate_schedule(&ScheduleSpec::new(ScheduleKind::Equal, total, steps).with_seed(seed)).unwrap();
        check_generated(&s, total)?;
        let (lo, hi) = (s.counts.iter().min().unwrap(), s.counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn fluctuating_either_succeeds_validly_or_reports_infeasible(
        (total, steps, min, max) in bounded(),
        seed in any::<u64>(),
    ) {
        let spec = ScheduleSpec::new(ScheduleKind::Fluctuating, total, steps).with_bounds(min, max).with_seed(seed);
        match generate_schedule(&spec) {
            Ok(s) => {
                check_generated(&s, total)?;
                prop_assert!(s.counts.iter().all(|&c| (min..=max).contains(&c)));
                let jump = (max - min).div_ceil(2);
                prop_assert!(steps < 2 || s.counts.windows(2).any(|w| w[0].abs_diff(w[1]) >= jump));
            }
            Err(e) => prop_assert!(matches!(e, ffcil::Error::InfeasibleSchedule(_)), "{e}"),
        }
    }

    #[test]
    fn extreme_has_a_large_head_and_small_tail(steps in 1usize..10, extra in 1usize..40, seed in any::<u64>()) {
        let total = 2 * (steps - 1) + extra;
        let s = generate_schedule(&ScheduleSpec::new(ScheduleKind::Extreme, total, steps).with_seed(seed)).unwrap();
        check_generated(&s, total)?;
        prop_assert!(s.counts[1..].iter().all(|&c| c == 1 || c == 2));
    }

    #[test]
    fn explicit_counts_are_kept(counts in prop::collection::vec(1usize..9, 1..8), seed in any::<u64>()) {
        let total = counts.iter().sum();
        let s = generate_schedule(&ScheduleSpec::explicit(counts.clone()).with_seed(seed)).unwrap();
        check_generated(&s, total)?;
        prop_assert_eq!(s.counts, counts);
    }

    #[test]
    fn generation_is_a_function_of_spec_and_seed(
        (total, steps, min, max) in bounded(),
        kind in prop::sample::select(vec![ScheduleKind::Equal, ScheduleKind::Ascending, ScheduleKind::Fluctuating]),
        seed in any::<u64>(),
    ) {
        let spec = ScheduleSpec::new(kind, total, steps).with_bounds(min, max).with_seed(seed);
        let a = generate_schedule(&spec);
        let b = generate_schedule(&spec);
        prop_assert_eq!(a.ok(), b.ok());
    }

    #[test]
    fn text_round_trip(counts in prop::collection::vec(1usize..6, 1..6), seed in any::<u64>()) {
        let s = generate_schedule(&ScheduleSpec::explicit(counts).with_seed(seed)).unwrap();
        prop_assert_eq!(IncrementSchedule::from_text(&s.to_text()).unwrap(), s);
    }

    /// Moving one label into an extra step breaks non-repetition; dropping a
    /// step's classes breaks free-flow.
    #[test]
    fn corrupted_schedules_are_rejected(counts in prop::collection::vec(1usize..6, 2..6), seed in any::<u64>()) {
        let total: usize = counts.iter().sum();
        let s = generate_schedule(&ScheduleSpec::explicit(counts).with_seed(seed)).unwrap();

        let mut repeated = s.clone();
        let label = repeated.class_sets[0][0];
        repeated.class_sets[1].push(label);
        repeated.counts[1] += 1;
        let repeat_err = validate_schedule(&repeated, total);
        prop_assert!(matches!(repeat_err, Err(ScheduleViolation::NonRepetition { .. })), "{:?}", repeat_err);

        let mut emptied = s.clone();
        emptied.class_sets[1].clear();
        emptied.counts[1] = 0;
        prop_assert_eq!(validate_schedule(&emptied, total), Err(ScheduleViolation::FreeFlow { step: 1 }));
    }
}

#[test]
fn fluctuating_seeds_give_distinct_schedules() {
    for (total, steps, max) in [(100, 10, 100), (100, 10, 20), (50, 5, 50)] {
        let distinct: HashSet<Vec<usize>> = (0..100u64)
            .map(|seed| {
                let spec = ScheduleSpec::new(ScheduleKind::Fluctuating, total, steps).with_bounds(1, max).with_seed(seed);
                generate_schedule(&spec).unwrap().counts
            })
            .collect();
        assert!(distinct.len() >= 95, "{total}/{steps}/{max}: {} distinct count vectors", distinct.len());
    }
}

#[test]
fn infeasible_bounds_are_reported() {
    for spec in [
        ScheduleSpec::new(ScheduleKind::Equal, 3, 4),
        ScheduleSpec::new(ScheduleKind::Ascending, 30, 3).with_bounds(1, 5),
        ScheduleSpec::new(ScheduleKind::Extreme, 6, 4),
        ScheduleSpec::explicit(vec![3, 0, 2]),
    ] {
        assert!(matches!(generate_schedule(&spec), Err(ffcil::Error::InfeasibleSchedule(_))), "{spec:?}");
    }
}
