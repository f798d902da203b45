mod common;

use common::grad_instance;
use ffcil::alignment::{apply_alignment, diwa_eta, row_norm_means, AlignmentConfig, AlignmentMode};
use ffcil::data::LabeledExample;
use ffcil::model::{backward, load_checkpoint, save_checkpoint, ClassifierModel, HeadInit, Objective, Sgd};
use ffcil::losses::Aggregation;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;

fn model_with(seed: u64, dim: usize, hidden: usize, old: usize, new: usize) -> ClassifierModel {
    let mut m = ClassifierModel::new(dim, hidden, seed);
    m.expand_head(old, HeadInit::SmallUniform, seed).unwrap();
    let mut r = common::rng(seed);
    m.head.weight.mapv_inplace(|_| r.random_range(-2.0..2.0));
    m.head.bias.mapv_inplace(|_| r.random_range(-1.0..1.0));
    m.expand_head(new, HeadInit::SmallUniform, seed ^ 1).unwrap();
    let rows = m.head.weight.nrows();
    for c in old..rows {
        for v in m.head.weight.row_mut(c) {
            *v = r.random_range(-0.5..0.5);
        }
    }
    m
}

fn inputs(seed: u64, n: usize, dim: usize) -> Array2<f64> {
    let mut r = common::rng(seed ^ 0xfeed);
    Array2::from_shape_simple_fn((n, dim), || r.random_range(-3.0..3.0))
}

proptest! {
    #[test]
    fn forward_gives_a_distribution(seed in any::<u64>(), hidden in 0usize..6, old in 1usize..5, new in 1usize..5) {
        let m = model_with(seed, 4, hidden, old, new);
        let x = inputs(seed, 3, 4);
        for row in x.rows() {
            let (logits, probs) = m.forward(row.as_slice().unwrap()).unwrap();
            prop_assert_eq!(logits.len(), old + new);
            prop_assert!((probs.sum() - 1.0).abs() < 1e-12);
            prop_assert!(probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn expanding_the_head_keeps_old_logits(seed in any::<u64>(), hidden in 0usize..6, old in 1usize..5, extra in 1usize..5) {
        let mut m = ClassifierModel::new(4, hidden, seed);
        m.expand_head(old, HeadInit::SmallUniform, seed).unwrap();
        let x = inputs(seed, 5, 4);
        let before = m.logits_batch(x.view()).unwrap();
        m.expand_head(extra, HeadInit::SmallUniform, seed).unwrap();
        let after = m.logits_batch(x.view()).unwrap();
        prop_assert_eq!(after.ncols(), old + extra);
        prop_assert_eq!(after.slice(ndarray::s![.., ..old]), before.view());
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), hidden in 0usize..6, old in 1usize..5, new in 1usize..5) {
        let m = model_with(seed, 4, hidden, old, new);
        prop_assert_eq!(load_checkpoint(&save_checkpoint(&m)).unwrap(), m);
    }

    /// Two SGD steps against the classical-momentum update written out.
    #[test]
    fn sgd_follows_momentum_with_weight_decay(seed in any::<u64>(), lr in 0.0..0.5f64, mu in 0.0..0.95f64, wd in 0.0..0.01f64) {
        let inst = grad_instance(seed, 3, false, false);
        let batch: Vec<&LabeledExample> = inst.batch.iter().collect();
        let objective = Objective::main_only(Aggregation::ClassWiseMean);
        let mut model = inst.model.clone();
        let mut sgd = Sgd::new(lr, mu, wd).unwrap();

        let theta0 = model.head.weight.clone();
        let g0 = backward(&model, &batch, &objective, None, None).unwrap().1;
        sgd.step(&mut model, None, &g0).unwrap();
        let v0 = &g0.head.weight + &(&theta0 * wd);
        let theta1 = &theta0 - &(&v0 * lr);
        prop_assert!((&model.head.weight - &theta1).iter().all(|d| d.abs() < 1e-12));

        let g1 = backward(&model, &batch, &objective, None, None).unwrap().1;
        sgd.step(&mut model, None, &g1).unwrap();
        let v1 = &(&v0 * mu) + &(&g1.head.weight + &(&theta1 * wd));
        let theta2 = &theta1 - &(&v1 * lr);
        prop_assert!((&model.head.weight - &theta2).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn eta_grows_from_eta_min_toward_one(eta_min in 0.0..=1.0f64, tau in 0.1..50.0f64) {
        prop_assert_eq!(diwa_eta(1, eta_min, tau), eta_min);
        let mut prev = eta_min;
        for c in 2..200 {
            let eta = diwa_eta(c, eta_min, tau);
            prop_assert!(eta >= prev && eta <= 1.0, "eta({c}) = {eta}");
            prev = eta;
        }
    }

    #[test]
    fn diwa_with_full_intervention_is_wa(seed in any::<u64>(), old in 1usize..6, new in 1usize..6, tau in 0.1..20.0f64) {
        let base = model_with(seed, 5, 0, old, new);
        let (mut wa, mut diwa) = (base.clone(), base);
        let g_wa = apply_alignment(&mut wa, old, new, &AlignmentConfig::with_mode(AlignmentMode::Wa)).unwrap();
        let cfg = AlignmentConfig { mode: AlignmentMode::Diwa, eta_min: 1.0, tau };
        let g_diwa = apply_alignment(&mut diwa, old, new, &cfg).unwrap();
        prop_assert_eq!(g_wa, g_diwa);
        prop_assert_eq!(wa, diwa);
    }

    /// Only new-class weight rows move: they are scaled by the returned
    /// factor, and under WA their mean norm lands on the old-class mean.
    #[test]
    fn alignment_only_rescales_new_rows(
        seed in any::<u64>(),
        hidden in 0usize..5,
        old in 1usize..6,
        new in 1usize..6,
        mode in prop::sample::select(vec![AlignmentMode::Wa, AlignmentMode::Diwa]),
        eta_min in 0.0..=1.0f64,
    ) {
        let before = model_with(seed, 5, hidden, old, new);
        let mut after = before.clone();
        let cfg = AlignmentConfig { mode, eta_min, tau: 5.0 };
        let gamma = apply_alignment(&mut after, old, new, &cfg).unwrap();
        prop_assert!(gamma > 0.0);
        prop_assert_eq!(&after.hidden, &before.hidden);
        prop_assert_eq!(&after.head.bias, &before.head.bias);
        prop_assert_eq!(after.head.weight.slice(ndarray::s![..old, ..]), before.head.weight.slice(ndarray::s![..old, ..]));
        for c in old..old + new {
            for (a, b) in after.head.weight.row(c).iter().zip(before.head.weight.row(c)) {
                prop_assert!((a - gamma * b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
        if mode == AlignmentMode::Wa {
            let (mu_old, mu_new) = row_norm_means(&after, old, new).unwrap();
            prop_assert!((mu_old - mu_new).abs() < 1e-9 * mu_old.max(1.0));
        }
        // With zero biases a positive scale keeps the ranking inside each group.
        let mut zb = before.clone();
        zb.head.bias.fill(0.0);
        let mut zb_after = zb.clone();
        apply_alignment(&mut zb_after, old, new, &cfg).unwrap();
        let x = inputs(seed, 4, 5);
        let (l0, l1) = (zb.logits_batch(x.view()).unwrap(), zb_after.logits_batch(x.view()).unwrap());
        let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |bi, (i, &z)| if z > v[bi] { i } else { bi });
        for i in 0..4 {
            let (r0, r1) = (l0.row(i).to_vec(), l1.row(i).to_vec());
            prop_assert_eq!(argmax(&r0[..old]), argmax(&r1[..old]));
            prop_assert_eq!(argmax(&r0[old..]), argmax(&r1[old..]));
        }
    }
}

#[test]
fn mode_none_leaves_the_model_alone() {
    let before = model_with(9, 5, 3, 2, 3);
    let mut after = before.clone();
    assert_eq!(apply_alignment(&mut after, 2, 3, &AlignmentConfig::default()).unwrap(), 1.0);
    assert_eq!(after, before);
}
