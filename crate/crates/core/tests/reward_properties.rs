use proptest::prelude::*;

use tcer_core::grpo::group_advantage;
use tcer_core::policy::TokenDist;
use tcer_core::reward::{
    correction_term, coverage, endor_reward, gate_weight, info_gain, log_ratio_bound,
    non_saturated_mass, one_step_objective, one_step_optimal_policy, sentence_aggregate,
    sequence_reward, tcer_reward, RewardConfig, RewardVariant, TokenRewardTrace,
};

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64]
}

fn open_prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), 1e-9..=1.0f64]
}

fn lambda() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0), Just(3.0), 0.25..4.0f64]
}

fn epsilon() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1e-3), Just(1e-5), 1e-8..1.0f64]
}

// One rounding of the ratio can land a few ulps past the exact bound.
fn with_ulps(bound: f64) -> f64 {
    bound * (1.0 + 8.0 * f64::EPSILON)
}

fn dist(max: usize) -> impl Strategy<Value = TokenDist> {
    prop::collection::vec(0.0..1.0f64, 1..=max).prop_filter_map("non-zero mass", |w| {
        let z: f64 = w.iter().sum();
        (z > 1e-9).then(|| TokenDist::new(w.iter().map(|x| x / z).collect()).unwrap())
    })
}

proptest! {
    #[test]
    fn info_gain_is_bounded(p in prob(), q in prob(), e in epsilon()) {
        prop_assert!(info_gain(p, q, e).abs() <= with_ulps(log_ratio_bound(e)));
    }

    #[test]
    fn correction_is_bounded_by_gate(p in prob(), q in prob(), l in lambda(), e in epsilon()) {
        prop_assert!(correction_term(p, q, l, e).abs() <= with_ulps(gate_weight(p, l) * log_ratio_bound(e)));
    }

    #[test]
    fn correction_vanishes_at_saturation(q in prob(), l in lambda(), e in epsilon()) {
        prop_assert_eq!(correction_term(1.0, q, l, e), 0.0);
    }

    #[test]
    fn correction_lower_bound(p in 0.0..1.0f64, q in prob(), frac in 0.0..=1.0f64, l in lambda(), e in epsilon()) {
        let phi = info_gain(p, q, e);
        prop_assume!(phi.abs() >= 1e-12);
        let delta = (1.0 - p) * frac;
        prop_assume!(delta > 0.0);
        prop_assert!(correction_term(p, q, l, e).abs() >= delta.powf(l) * phi.abs());
    }

    #[test]
    fn gate_is_strictly_decreasing(a in 1e-6..1.0f64, b in 1e-6..1.0f64, l in 0.5..4.0f64) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(gate_weight(lo, l) > gate_weight(hi, l));
        prop_assert!(gate_weight(a, l) > gate_weight(a, l + 0.5));
    }

    #[test]
    fn k_zero_reduces_to_endor(p in open_prob(), q in prob(), l in lambda(), e in epsilon()) {
        let cfg = RewardConfig { k: 0.0, lambda: l, epsilon: e, ..RewardConfig::default() };
        prop_assert_eq!(tcer_reward(p, q, &cfg).unwrap(), endor_reward(p).unwrap());
    }

    #[test]
    fn trace_rows_reconstruct(
        pq in prop::collection::vec((open_prob(), prob()), 1..20),
        k in 0.0..5.0f64,
    ) {
        let cfg = RewardConfig { k, ..RewardConfig::default() };
        let (p, q): (Vec<f64>, Vec<f64>) = pq.into_iter().unzip();
        let tokens: Vec<usize> = (0..p.len()).collect();
        let trace = TokenRewardTrace::from_probs(&tokens, &p, &q, &cfg).unwrap();
        for r in &trace.records {
            prop_assert_eq!(r.endor, r.p.ln());
            prop_assert!((r.tcer - (r.endor + k * r.gate * r.phi)).abs() <= 1e-12);
        }
        let whole = sentence_aggregate(&trace, &[(0, trace.len())]).unwrap();
        let seq = sequence_reward(&trace).unwrap();
        prop_assert!((whole[0].tcer - seq).abs() <= 1e-12 * seq.abs().max(1.0));
        let endor = trace.mean_reward(RewardVariant::Endor).unwrap();
        prop_assert!((whole[0].endor - endor).abs() <= 1e-12 * endor.abs().max(1.0));
    }

    #[test]
    fn coverage_lemmas(d in dist(8), l in lambda()) {
        let s = coverage(&d, l);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s == 0.0, d.is_deterministic());
        for j in 1..=9 {
            let delta = j as f64 / 10.0;
            prop_assert!(s >= delta.powf(l) * non_saturated_mass(&d, delta));
        }
    }

    #[test]
    fn one_step_optimum_dominates_mixtures(d in dist(6), w in prop::collection::vec(0.0..1.0f64, 6)) {
        prop_assume!(d.probs().iter().all(|&p| p > 0.0));
        let v = d.len();
        let z: f64 = w[..v].iter().sum();
        prop_assume!(z > 1e-9);
        let pi = TokenDist::new(w[..v].iter().map(|x| x / z).collect()).unwrap();
        let best = one_step_objective(&one_step_optimal_policy(&d), &d);
        prop_assert!(one_step_objective(&pi, &d) <= best + 1e-12);
    }

    #[test]
    fn advantages_have_zero_mean(rewards in prop::collection::vec(-5.0..5.0f64, 2..12)) {
        let a = group_advantage(&rewards).unwrap();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        prop_assert!(mean.abs() <= 1e-9);
        let nonzero = a.iter().any(|x| *x != 0.0);
        if nonzero {
            let var = a.iter().map(|x| x * x).sum::<f64>() / a.len() as f64;
            prop_assert!((var - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn equal_rewards_give_zero_advantages(r in -5.0..5.0f64, n in 2usize..12) {
        prop_assert!(group_advantage(&vec![r; n]).unwrap().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn decomposition_identity_fixture() {
    for &(p, q) in &[(0.3f64, 0.7f64), (0.9, 0.01), (1e-3, 0.5), (0.5, 0.5)] {
        let raw = p.ln() - (q.ln() + (p / q).ln());
        assert!(raw.abs() <= 1e-12);
        for e in [1e-3, 1e-5] {
            if p >= 10.0 * e && q >= 10.0 * e {
                let smoothed = p.ln() - (q.ln() + info_gain(p, q, e));
                assert!(smoothed.abs() <= 2.0 * e / f64::min(p, q));
            }
        }
    }
}
