use std::f64::consts::LN_2;

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::seeds;

fn random_batch(dim: usize, seed: u64) -> DpoBatch {
    let mut rng = seeds::rng(seed, "dpo-batch");
    let mut v = |s: f64| -> Vec<f64> { (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect() };
    let (v_w, v_l) = (v(0.5), v(0.5));
    let (v_theta_w, v_theta_l) = (v(0.5), v(0.5));
    let (v_ref_w, v_ref_l) = (v(0.5), v(0.5));
    DpoBatch {
        v_w,
        v_l,
        v_theta_w,
        v_theta_l,
        v_ref_w,
        v_ref_l,
        t: rng.random_range(0.0..1.0),
        beta: rng.random_range(0.1..2.0) / dim as f64,
    }
}

#[test]
fn beta_schedule_values() {
    assert_eq!(beta_schedule(0.0, 250.0).unwrap(), 250.0);
    assert_eq!(beta_schedule(1.0, 250.0).unwrap(), 0.0);
    assert_eq!(beta_schedule(1.0, 3.0).unwrap(), 0.0);
    assert_eq!(beta_schedule(0.5, 250.0).unwrap(), 187.5);
    assert_eq!(beta_schedule(0.0, DEFAULT_BETA).unwrap(), 250.0);
    assert!(matches!(beta_schedule(1.5, 250.0), Err(DpoError::TimeOutOfRange(_))));
    assert!(matches!(beta_schedule(-0.1, 250.0), Err(DpoError::TimeOutOfRange(_))));
    assert!(matches!(beta_schedule(0.5, 0.0), Err(DpoError::InvalidBeta(_))));
}

#[test]
fn loss_at_reference_is_ln2() {
    let mut b = random_batch(16, 1);
    b.v_theta_w = b.v_ref_w.clone();
    b.v_theta_l = b.v_ref_l.clone();
    b.beta = 250.0;
    let out = flow_dpo_loss(&b).unwrap();
    assert_eq!(out.logit, 0.0);
    assert!((out.loss - LN_2).abs() <= 1e-12);
}

#[test]
fn loss_at_t1_is_ln2() {
    for seed in 0..20 {
        let mut b = random_batch(8, seed);
        b.t = 1.0;
        b.beta = 250.0;
        let out = flow_dpo_loss(&b).unwrap();
        assert!((out.loss - LN_2).abs() <= 1e-12);
        assert!(out.grad_theta_w.iter().chain(&out.grad_theta_l).all(|g| *g == 0.0));
    }
}

#[test]
fn winner_on_target_lowers_loss() {
    let mut b = random_batch(8, 3);
    b.v_theta_w = b.v_w.clone();
    b.v_theta_l = b.v_ref_l.clone();
    let out = flow_dpo_loss(&b).unwrap();
    assert!(out.l_w < 0.0 && out.l_l == 0.0);
    assert!(out.loss < LN_2);
}

#[test]
fn rejects_bad_batches() {
    let mut b = random_batch(4, 5);
    b.v_l.pop();
    assert!(matches!(flow_dpo_loss(&b), Err(DpoError::Dimension(_))));
    let mut b = random_batch(4, 5);
    b.v_ref_w[2] = f64::NAN;
    assert!(matches!(flow_dpo_loss(&b), Err(DpoError::NonFinite("v_ref_w"))));
    let mut b = random_batch(4, 5);
    b.t = 1.2;
    assert!(flow_dpo_loss(&b).is_err());
}

#[test]
fn loss_stays_finite_for_huge_logits() {
    let mut b = random_batch(4, 9);
    b.beta = 1e6;
    b.t = 0.0;
    let out = flow_dpo_loss(&b).unwrap();
    assert!(out.loss.is_finite() && out.loss >= 0.0);
    assert!(out.logit.abs() > 1e4);
}

/// Central finite differences of the loss against the analytic gradients.
fn check_gradients(b: &DpoBatch) -> (f64, f64) {
    let h = 1e-5;
    let out = flow_dpo_loss(b).unwrap();
    let mut analytic = out.grad_theta_w.clone();
    analytic.extend(&out.grad_theta_l);
    let mut numeric = Vec::with_capacity(analytic.len());
    for branch in 0..2 {
        for i in 0..b.v_w.len() {
            let eval = |delta: f64| {
                let mut c = b.clone();
                let v = if branch == 0 { &mut c.v_theta_w } else { &mut c.v_theta_l };
                v[i] += delta;
                flow_dpo_loss(&c).unwrap().loss
            };
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1e-3 * norm).max(1e-12))
        .fold(0.0, f64::max);
    (diff / norm.max(1e-300), worst)
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..100u64 {
        let dim = 1 + (seed as usize * 37) % 64;
        let b = random_batch(dim, 1000 + seed);
        let (rel, worst) = check_gradients(&b);
        assert!(rel <= 1e-5, "seed {seed} dim {dim}: relative error {rel}");
        assert!(worst <= 1e-4, "seed {seed} dim {dim}: worst component {worst}");
    }
}

proptest! {
    #[test]
    fn gradient_property(dim in 1usize..=64, seed in any::<u64>()) {
        let (rel, _) = check_gradients(&random_batch(dim, seed));
        prop_assert!(rel <= 1e-5);
    }

    #[test]
    fn swap_symmetry(dim in 1usize..=32, seed in any::<u64>()) {
        let b = random_batch(dim, seed);
        let swapped = DpoBatch {
            v_w: b.v_l.clone(),
            v_l: b.v_w.clone(),
            v_theta_w: b.v_theta_l.clone(),
            v_theta_l: b.v_theta_w.clone(),
            v_ref_w: b.v_ref_l.clone(),
            v_ref_l: b.v_ref_w.clone(),
            ..b.clone()
        };
        let x = flow_dpo_loss(&b).unwrap();
        let y = flow_dpo_loss(&swapped).unwrap();
        prop_assert!((x.logit + y.logit).abs() <= 1e-12 * x.logit.abs().max(1.0));
        prop_assert!((y.loss - softplus(x.logit)).abs() <= 1e-12);
        prop_assert!(x.loss + y.loss >= 2.0 * LN_2 - 1e-12);
    }

    #[test]
    fn logit_scales_with_beta(dim in 1usize..=32, seed in any::<u64>(), k in 0i32..6) {
        let b = random_batch(dim, seed);
        let c = 2f64.powi(k - 2);
        let scaled = DpoBatch { beta: b.beta * c, ..b.clone() };
        prop_assert_eq!(flow_dpo_loss(&scaled).unwrap().logit, c * flow_dpo_loss(&b).unwrap().logit);
    }
}

#[test]
fn equal_sides_sum_to_2ln2() {
    let mut b = random_batch(4, 77);
    b.v_theta_w = b.v_ref_w.clone();
    b.v_theta_l = b.v_ref_l.clone();
    let x = flow_dpo_loss(&b).unwrap();
    assert!((x.loss + softplus(x.logit) - 2.0 * LN_2).abs() < 1e-15);
}

#[test]
fn mean_loss_over_batches() {
    let batches: Vec<_> = (0..5).map(|s| random_batch(3, s)).collect();
    let direct = batches.iter().map(|b| flow_dpo_loss(b).unwrap().loss).sum::<f64>() / 5.0;
    assert_eq!(mean_loss(&batches).unwrap(), direct);
    assert!(mean_loss(&[]).is_err());
}

fn group(id: &str, oks: &[f64]) -> ConditionGroup {
    ConditionGroup {
        condition_id: id.into(),
        samples: oks.iter().enumerate().map(|(i, o)| (format!("{id}-v{i}"), *o)).collect(),
    }
}

#[test]
fn preference_pair_examples() {
    let r = build_preference_pairs(&[group("c0", &[0.9, 0.8, 0.7, 0.6])], DEFAULT_MARGIN);
    assert_eq!(r.pairs.len(), 1);
    assert_eq!((r.pairs[0].winner_id.as_str(), r.pairs[0].loser_id.as_str()), ("c0-v0", "c0-v3"));
    assert_eq!((r.pairs[0].winner_oks, r.pairs[0].loser_oks), (0.9, 0.6));

    let r = build_preference_pairs(&[group("c1", &[0.85, 0.85])], DEFAULT_MARGIN);
    assert!(r.pairs.is_empty());
    assert_eq!(r.below_margin, 1);

    let r = build_preference_pairs(&[group("c2", &[0.5])], DEFAULT_MARGIN);
    assert!(r.pairs.is_empty());
    assert_eq!(r.skipped_small, 1);
}

#[test]
fn preference_pair_ties() {
    let g = ConditionGroup {
        condition_id: "c".into(),
        samples: vec![("b".into(), 0.9), ("a".into(), 0.9), ("d".into(), 0.1), ("c".into(), 0.1)],
    };
    let r = build_preference_pairs(&[g], DEFAULT_MARGIN);
    assert_eq!((r.pairs[0].winner_id.as_str(), r.pairs[0].loser_id.as_str()), ("a", "c"));
}

proptest! {
    #[test]
    fn pairs_respect_margin(groups in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..6), 0..20), margin in 0.0f64..0.3) {
        let groups: Vec<_> = groups.iter().enumerate().map(|(i, g)| group(&format!("c{i}"), g)).collect();
        let r = build_preference_pairs(&groups, margin);
        prop_assert_eq!(r.pairs.len() + r.skipped_small + r.below_margin, groups.len());
        for p in &r.pairs {
            prop_assert!(p.winner_oks >= p.loser_oks + margin);
            let prefix = format!("{}-", p.condition_id);
            prop_assert!(p.winner_id.starts_with(&prefix));
            prop_assert!(p.loser_id.starts_with(&prefix));
        }
    }
}

#[test]
fn alignment_summary_examples() {
    let s = alignment_summary(&[0.874], &[0.927]).unwrap();
    assert!((s.reduction - 0.053 / 0.126).abs() < 1e-12);
    assert!((s.reduction - 0.421).abs() < 0.001);
    assert_eq!(alignment_summary(&[0.6, 0.7], &[0.6, 0.7]).unwrap().reduction, 0.0);
    assert!((alignment_summary(&[0.5], &[0.75]).unwrap().reduction - 0.5).abs() < 1e-15);
    assert_eq!(alignment_summary(&[1.0, 1.0], &[0.9]), Err(DpoError::UndefinedReduction));
    assert!(alignment_summary(&[], &[0.9]).is_err());
    let s = alignment_summary(&[0.2, 0.4], &[0.9]).unwrap();
    assert!((s.std_before - 0.1).abs() < 1e-15);
    assert_eq!(s.std_after, 0.0);
}

#[test]
fn toy_training_improves_preferences() {
    let set = synthetic_pairs(64, 4, 3, 7);
    let cfg = TrainConfig {
        steps: 2000,
        ..Default::default()
    };
    let report = train_toy_control(&set, &cfg).unwrap();
    assert_eq!(report.losses.len(), 2001);
    assert!((report.losses[0] - LN_2).abs() < 1e-12);
    assert_eq!(report.initial_win_rate, 0.0);
    assert!(report.final_win_rate >= 0.9, "win rate {}", report.final_win_rate);
    assert!(report.final_loss < LN_2);
    let again = train_toy_control(&set, &cfg).unwrap();
    assert_eq!(report, again);
}

#[test]
fn toy_training_zero_learning_rate_is_flat() {
    let set = synthetic_pairs(16, 3, 2, 1);
    let cfg = TrainConfig {
        steps: 25,
        learning_rate: 0.0,
        ..Default::default()
    };
    let report = train_toy_control(&set, &cfg).unwrap();
    assert!(report.losses.iter().all(|l| *l == report.losses[0]));
    let zero = train_toy_control(&set, &TrainConfig { steps: 0, ..cfg }).unwrap();
    assert_eq!(zero.losses.len(), 1);
    assert_eq!(zero.final_win_rate, zero.initial_win_rate);
}

#[test]
fn toy_training_reports_divergence() {
    let set = synthetic_pairs(16, 3, 2, 1);
    let cfg = TrainConfig {
        steps: 200,
        learning_rate: 1e6,
        beta: 1e6,
    };
    assert!(matches!(train_toy_control(&set, &cfg), Err(DpoError::Diverged { .. })));
}
