//! Randomized property suites over the reward kernel and the GRPO loss.
//!
//! Every property draws its samples in fixed-size chunks, each chunk from its
//! own counter-based stream, and merges chunk tallies in order. Reports are
//! therefore identical for any thread count.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{group_advantage, grpo_loss, GrpoConfig, RolloutGroup};
use crate::policy::{PolicyKind, PolicyParams, TokenDist};
use crate::reward::{
    argmax, correction_derivative, correction_term, coverage, gate_weight, info_gain,
    log_ratio_bound, non_saturated_mass, one_step_objective, one_step_optimal_policy,
};
use crate::rng;
use crate::vocab::{TokenSeq, Vocabulary};

pub const LAMBDAS: [f64; 3] = [1.0, 2.0, 3.0];
pub const EPSILONS: [f64; 2] = [1e-3, 1e-5];
/// Step of the brute-force simplex grid is `1 / GRID_DIVISIONS`.
pub const GRID_DIVISIONS: usize = 20;
pub const FD_STEP: f64 = 1e-6;
pub const DERIVATIVE_RTOL: f64 = 1e-6;
pub const GRPO_RTOL: f64 = 1e-5;
/// Gradient magnitudes below this are compared in absolute terms.
pub const GRPO_GRAD_FLOOR: f64 = 1e-4;
pub const RAW_DECOMPOSITION_TOL: f64 = 1e-12;
pub const LINEARITY_TOL: f64 = 1e-12;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Bounds,
    Lemmas,
    Gradients,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bounds" => Ok(Suite::Bounds),
            "lemmas" => Ok(Suite::Lemmas),
            "gradients" => Ok(Suite::Gradients),
            "all" => Ok(Suite::All),
            other => Err(Error::InvalidConfig(format!(
                "unknown suite {other:?} (expected bounds, lemmas, gradients or all)"
            ))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Bounds => "bounds",
            Suite::Lemmas => "lemmas",
            Suite::Gradients => "gradients",
            Suite::All => "all",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seed: u64,
    /// Replaces the ε grid of the bounds suite. Used to check that broken
    /// preconditions surface as violations.
    pub epsilon_override: Option<f64>,
}

impl VerifyOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        VerifyOptions {
            samples,
            seed,
            epsilon_override: None,
        }
    }

    fn epsilons(&self) -> Vec<f64> {
        match self.epsilon_override {
            Some(e) => vec![e],
            None => EPSILONS.to_vec(),
        }
    }
}

/// Pass counts and the smallest margin seen. A negative (or missing) worst
/// slack means at least one violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub checked: u64,
    pub passed: u64,
    pub violations: u64,
    pub worst_slack: f64,
}

impl PropertyReport {
    pub fn holds(&self) -> bool {
        self.violations == 0 && self.checked > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub samples: usize,
    pub seed: u64,
    pub pass: bool,
    pub properties: Vec<PropertyReport>,
}

#[derive(Debug, Clone, Copy)]
struct Tally {
    checked: u64,
    passed: u64,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checked: 0,
            passed: 0,
            worst: f64::INFINITY,
        }
    }

    /// Records one check; it passes iff `slack ≥ 0`. NaN counts as a failure.
    fn check(&mut self, slack: f64) {
        self.checked += 1;
        if slack >= 0.0 {
            self.passed += 1;
        }
        self.worst = if slack.is_nan() {
            f64::NEG_INFINITY
        } else {
            self.worst.min(slack)
        };
    }

    fn flag(&mut self, ok: bool) {
        self.check(if ok { 0.0 } else { -1.0 });
    }

    fn merge(mut self, other: Tally) -> Tally {
        self.checked += other.checked;
        self.passed += other.passed;
        self.worst = self.worst.min(other.worst);
        self
    }

    fn report(self, name: &str) -> PropertyReport {
        PropertyReport {
            name: name.to_string(),
            checked: self.checked,
            passed: self.passed,
            violations: self.checked - self.passed,
            worst_slack: self.worst,
        }
    }
}

fn run_property<F>(name: &str, id: u64, opts: &VerifyOptions, sample: F) -> PropertyReport
where
    F: Fn(&mut ChaCha8Rng, &mut Tally) + Sync,
{
    let chunks = opts.samples.div_ceil(CHUNK);
    let tallies: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(opts.seed, rng::label::VERIFY, &[id, c as u64]);
            let mut t = Tally::new();
            let n = CHUNK.min(opts.samples - c * CHUNK);
            for _ in 0..n {
                sample(&mut r, &mut t);
            }
            t
        })
        .collect();
    tallies
        .into_iter()
        .fold(Tally::new(), Tally::merge)
        .report(name)
}

/// Uniform on `[0, 1]` with extra mass on the exact endpoints.
fn unit_with_ends<R: Rng + ?Sized>(r: &mut R) -> f64 {
    match r.gen_range(0..50) {
        0 => 0.0,
        1 => 1.0,
        _ => r.gen(),
    }
}

/// A random strictly positive distribution; sharpness varies per draw.
pub fn random_dist<R: Rng + ?Sized>(r: &mut R, size: usize) -> TokenDist {
    let power = [1.0, 2.0, 4.0][r.gen_range(0..3)];
    let w: Vec<f64> = (0..size)
        .map(|_| (1.0 - r.gen::<f64>()).ln().abs().powf(power) + 1e-12)
        .collect();
    let z: f64 = w.iter().sum();
    TokenDist::new(w.into_iter().map(|x| x / z).collect()).expect("normalised weights")
}

/// A random distribution that is sometimes deterministic or has exact zeros.
fn random_dist_with_edges<R: Rng + ?Sized>(r: &mut R, size: usize) -> TokenDist {
    match r.gen_range(0..10) {
        0 => TokenDist::delta(size, r.gen_range(0..size)),
        1 => {
            let keep = r.gen_range(0..size);
            let d = random_dist(r, size);
            let mut p: Vec<f64> = d.probs().to_vec();
            for (i, x) in p.iter_mut().enumerate() {
                if i != keep && r.gen_bool(0.5) {
                    *x = 0.0;
                }
            }
            let z: f64 = p.iter().sum();
            TokenDist::new(p.into_iter().map(|x| x / z).collect()).expect("normalised weights")
        }
        _ => random_dist(r, size),
    }
}

pub fn check_info_gain_bound(opts: &VerifyOptions) -> PropertyReport {
    let eps = opts.epsilons();
    run_property("info_gain_bound", 1, opts, |r, t| {
        let (p, q) = (unit_with_ends(r), unit_with_ends(r));
        for &e in &eps {
            t.check(log_ratio_bound(e) - info_gain(p, q, e).abs());
        }
    })
}

pub fn check_correction_upper_bound(opts: &VerifyOptions) -> PropertyReport {
    let eps = opts.epsilons();
    run_property("correction_upper_bound", 2, opts, |r, t| {
        let (p, q) = (unit_with_ends(r), unit_with_ends(r));
        for &l in &LAMBDAS {
            for &e in &eps {
                let c = correction_term(p, q, l, e);
                t.check(gate_weight(p, l) * log_ratio_bound(e) - c.abs());
            }
        }
    })
}

pub fn check_correction_zero_at_saturation(opts: &VerifyOptions) -> PropertyReport {
    let eps = opts.epsilons();
    run_property("correction_zero_at_saturation", 3, opts, |r, t| {
        let q = unit_with_ends(r);
        for &l in &LAMBDAS {
            for &e in &eps {
                t.flag(correction_term(1.0, q, l, e) == 0.0);
            }
        }
    })
}

/// `|C| ≥ δ^λ |φ|` for a random `δ ∈ (0, 1 − p]` and for `δ = 1 − p`; pairs
/// with `|φ| < 1e-12` are skipped since the bound is vacuous there.
pub fn check_correction_lower_bound(opts: &VerifyOptions) -> PropertyReport {
    let eps = opts.epsilons();
    run_property("correction_lower_bound", 4, opts, |r, t| {
        let p = match r.gen_range(0..50) {
            0 => 0.0,
            _ => r.gen::<f64>(),
        };
        let q = unit_with_ends(r);
        let room = 1.0 - p;
        if room <= 0.0 {
            return;
        }
        let deltas = [room * (1.0 - r.gen::<f64>()), room];
        for &l in &LAMBDAS {
            for &e in &eps {
                let phi = info_gain(p, q, e);
                if phi.abs() < 1e-12 {
                    continue;
                }
                let c = correction_term(p, q, l, e).abs();
                for d in deltas {
                    t.check(c - d.powf(l) * phi.abs());
                }
            }
        }
    })
}

pub fn check_gate_monotone(opts: &VerifyOptions) -> PropertyReport {
    run_property("gate_monotone", 5, opts, |r, t| {
        let (a, b) = (r.gen::<f64>(), r.gen::<f64>());
        if a == 0.0 || b == 0.0 || a == b {
            return;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let l = 0.5 + 3.0 * r.gen::<f64>();
        t.check(gate_weight(lo, l) - gate_weight(hi, l));
        t.check(gate_weight(a, l) - gate_weight(a, l + 0.5));
        let g = gate_weight(a, l);
        t.flag((0.0..=1.0).contains(&g));
    })
}

/// `ln p = ln q + ln(p/q)` with raw ratios, and the smoothed version within
/// `2ε / min(p, q)` for `p, q ≥ 10ε`.
pub fn check_decomposition(opts: &VerifyOptions) -> PropertyReport {
    let eps = opts.epsilons();
    run_property("decomposition_identity", 6, opts, |r, t| {
        let (p, q) = (1.0 - r.gen::<f64>(), 1.0 - r.gen::<f64>());
        t.check(RAW_DECOMPOSITION_TOL - (p.ln() - (q.ln() + (p / q).ln())).abs());
        for &e in &eps {
            if p >= 10.0 * e && q >= 10.0 * e {
                let gap = (p.ln() - (q.ln() + info_gain(p, q, e))).abs();
                t.check(2.0 * e / p.min(q) - gap);
            }
        }
    })
}

/// Precondition of the smoothed kernel: `ε > 0`.
pub fn check_epsilon_precondition(opts: &VerifyOptions) -> PropertyReport {
    let eps = opts.epsilons();
    run_property("epsilon_positive", 7, opts, |_, t| {
        for &e in &eps {
            t.flag(e > 0.0 && e.is_finite());
        }
    })
}

/// The one-step objective is linear in the policy (11 mixing weights).
pub fn check_linearity(opts: &VerifyOptions) -> PropertyReport {
    run_property("one_step_linearity", 11, opts, |r, t| {
        let v = r.gen_range(2..=6);
        let s = random_dist(r, v);
        let (a, b) = (random_dist_with_edges(r, v), random_dist_with_edges(r, v));
        let (fa, fb) = (one_step_objective(&a, &s), one_step_objective(&b, &s));
        for j in 0..=10 {
            let w = j as f64 / 10.0;
            let mix: Vec<f64> = a
                .probs()
                .iter()
                .zip(b.probs())
                .map(|(x, y)| w * x + (1.0 - w) * y)
                .collect();
            let m = TokenDist::new(mix).expect("mixture of distributions");
            let lhs = one_step_objective(&m, &s);
            t.check(LINEARITY_TOL - (lhs - (w * fa + (1.0 - w) * fb)).abs());
        }
    })
}

/// All weight vectors `k / GRID_DIVISIONS` on the simplex of dimension `v`.
pub fn simplex_grid(v: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, slots: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if slots == 1 {
            cur.push(left);
            out.push(
                cur.iter()
                    .map(|&k| k as f64 / GRID_DIVISIONS as f64)
                    .collect(),
            );
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(left - k, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(GRID_DIVISIONS, v, &mut Vec::new(), &mut out);
    out
}

/// No simplex grid point beats the delta at the specialist's argmax, whose
/// value is exactly `max_v ln π_s(v)`; ties go to the lowest index.
pub fn check_one_step_optimum(opts: &VerifyOptions) -> PropertyReport {
    let grids: Vec<Vec<Vec<f64>>> = (0..=6)
        .map(|v| if v < 2 { Vec::new() } else { simplex_grid(v) })
        .collect();
    run_property("one_step_optimum", 12, opts, |r, t| {
        let v = r.gen_range(2..=6);
        let s = random_dist(r, v);
        let logs: Vec<f64> = s.probs().iter().map(|p| p.ln()).collect();
        let opt = one_step_optimal_policy(&s);
        let value = one_step_objective(&opt, &s);
        let best = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        t.flag(value == best && opt.probs()[argmax(&s)] == 1.0);
        let grid_best = grids[v]
            .iter()
            .map(|w| {
                w.iter()
                    .zip(&logs)
                    .filter(|(x, _)| **x > 0.0)
                    .map(|(x, l)| x * l)
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        t.check(value - grid_best);
        // Exact ties resolve to the lowest index.
        let (i, j) = (r.gen_range(0..v), r.gen_range(0..v));
        if i != j {
            let mut p = vec![0.0; v];
            p[i] = 0.5;
            p[j] = 0.5;
            let tie = TokenDist::new(p).expect("two-point distribution");
            t.flag(argmax(&tie) == i.min(j));
        }
    })
}

pub fn check_coverage_range(opts: &VerifyOptions) -> PropertyReport {
    run_property("coverage_range_and_zero", 13, opts, |r, t| {
        let v = r.gen_range(2..=8);
        let d = random_dist_with_edges(r, v);
        for &l in &LAMBDAS {
            let s = coverage(&d, l);
            t.flag((0.0..=1.0).contains(&s));
            t.flag((s == 0.0) == d.is_deterministic());
        }
    })
}

/// `S ≥ δ^λ · mass(A_δ)` for δ ∈ {0.1, …, 0.9}.
pub fn check_coverage_lower_bound(opts: &VerifyOptions) -> PropertyReport {
    run_property("coverage_lower_bound", 14, opts, |r, t| {
        let v = r.gen_range(2..=8);
        let d = random_dist_with_edges(r, v);
        for &l in &LAMBDAS {
            let s = coverage(&d, l);
            for j in 1..=9 {
                let delta = j as f64 / 10.0;
                t.check(s - delta.powf(l) * non_saturated_mass(&d, delta));
            }
        }
    })
}

/// Closed-form `dC/dp` against central differences, relative to
/// `max(1, |dC/dp|)`.
pub fn check_correction_derivative(opts: &VerifyOptions) -> PropertyReport {
    run_property("correction_derivative_fd", 21, opts, |r, t| {
        let p = r.gen_range(0.01..=0.99);
        let q = unit_with_ends(r);
        for &l in &LAMBDAS {
            for &e in &EPSILONS {
                let Ok(a) = correction_derivative(p, q, l, e) else {
                    t.flag(false);
                    continue;
                };
                let fd = (correction_term(p + FD_STEP, q, l, e)
                    - correction_term(p - FD_STEP, q, l, e))
                    / (2.0 * FD_STEP);
                t.check(DERIVATIVE_RTOL * a.abs().max(1.0) - (a - fd).abs());
            }
        }
    })
}

/// Boundary behaviour at `p = 1`: `0` for `λ > 1`, `−φ` for `λ = 1`, an
/// error for `λ < 1`.
pub fn check_derivative_boundary(opts: &VerifyOptions) -> PropertyReport {
    run_property("correction_derivative_boundary", 22, opts, |r, t| {
        let q = unit_with_ends(r);
        let e = EPSILONS[r.gen_range(0..EPSILONS.len())];
        let l = 1.0 + 3.0 * r.gen::<f64>();
        t.flag(correction_derivative(1.0, q, l, e).ok() == Some(0.0));
        t.flag(correction_derivative(1.0, q, 1.0, e).ok() == Some(-info_gain(1.0, q, e)));
        t.flag(correction_derivative(1.0, q, r.gen_range(0.05..0.95), e).is_err());
    })
}

/// A random single-group GRPO instance on a tabular bigram policy. The old
/// policy differs from the actor so ratios spread across both clip edges;
/// instances with a ratio within 1e-3 of an edge are redrawn because the
/// loss has a kink there.
pub fn random_grpo_instance<R: Rng + ?Sized>(
    r: &mut R,
) -> (PolicyParams, PolicyParams, RolloutGroup, GrpoConfig) {
    loop {
        let v = r.gen_range(3..=5);
        let vocab = Arc::new(
            Vocabulary::from_content((0..v - 1).map(|i| format!("w{i}"))).expect("vocabulary"),
        );
        let kind = PolicyKind::TabularNgram { order: 2 };
        let actor = PolicyParams::random(kind, vocab.clone(), 1.0, r).expect("params");
        let mut old = actor.clone();
        old.values_mut()
            .iter_mut()
            .for_each(|x| *x += 0.3 * (2.0 * r.gen::<f64>() - 1.0));
        let reference = PolicyParams::random(kind, vocab.clone(), 1.0, r).expect("params");
        let config = GrpoConfig {
            group_size: r.gen_range(2..=5),
            kl_beta: [0.0, 0.001, 0.1][r.gen_range(0..3)],
            train_on_reference: r.gen_bool(0.5),
            ..GrpoConfig::default()
        };
        let prompt: Vec<usize> = (0..r.gen_range(0..=2))
            .map(|_| r.gen_range(0..v - 1))
            .collect();
        let sample = |r: &mut R, policy: &PolicyParams| {
            policy.sample_rollout(&prompt, 1.0, 5, r).expect("rollout")
        };
        let rollouts: Vec<TokenSeq> = (0..config.group_size).map(|_| sample(r, &old)).collect();
        let ref_seq = sample(r, &reference);
        let score = |seq: &TokenSeq, policy: &PolicyParams| -> Vec<f64> {
            let mut ctx = prompt.clone();
            seq.ids()
                .iter()
                .map(|&y| {
                    let lp = policy.log_prob(&ctx, y).expect("log prob");
                    ctx.push(y);
                    lp
                })
                .collect()
        };
        let old_log_probs: Vec<Vec<f64>> = rollouts.iter().map(|s| score(s, &old)).collect();
        let reference_log_probs = score(&ref_seq, &old);
        let rewards: Vec<f64> = (0..=config.group_size)
            .map(|_| r.gen_range(-2.0..0.0))
            .collect();
        let advantages = group_advantage(&rewards).expect("group of at least 2");
        let group = RolloutGroup {
            prompt: prompt.clone(),
            rollouts,
            reference: ref_seq,
            traces: Vec::new(),
            rewards,
            advantages,
            old_log_probs,
            reference_log_probs,
        };
        let near_edge = {
            let current_r = |seq: &TokenSeq, old_lp: &[f64]| -> bool {
                score(seq, &actor).iter().zip(old_lp).any(|(lp, o)| {
                    let ratio = (lp - o).exp();
                    (ratio - (1.0 - config.clip_eps)).abs() < 1e-3
                        || (ratio - (1.0 + config.clip_eps)).abs() < 1e-3
                })
            };
            group
                .rollouts
                .iter()
                .zip(&group.old_log_probs)
                .any(|(s, o)| current_r(s, o))
                || current_r(&group.reference, &group.reference_log_probs)
        };
        if !near_edge {
            return (actor, reference, group, config);
        }
    }
}

/// Analytic GRPO gradients against central differences, coordinate by
/// coordinate, with relative error measured against
/// `max(|g|, |fd|, GRPO_GRAD_FLOOR)`.
pub fn check_grpo_gradient(opts: &VerifyOptions) -> PropertyReport {
    run_property("grpo_gradient_fd", 23, opts, |r, t| {
        let (actor, reference, group, config) = random_grpo_instance(r);
        let Ok(out) = grpo_loss(&actor, &reference, &group, &config) else {
            t.flag(false);
            return;
        };
        let h = 1e-6;
        let mut probe = actor.clone();
        for i in 0..actor.num_params() {
            let x = actor.values()[i];
            probe.values_mut()[i] = x + h;
            let up = grpo_loss(&probe, &reference, &group, &config).map(|o| o.loss);
            probe.values_mut()[i] = x - h;
            let down = grpo_loss(&probe, &reference, &group, &config).map(|o| o.loss);
            probe.values_mut()[i] = x;
            match (up, down) {
                (Ok(u), Ok(d)) => {
                    let fd = (u - d) / (2.0 * h);
                    let g = out.grad[i];
                    let scale = g.abs().max(fd.abs()).max(GRPO_GRAD_FLOOR);
                    t.check(GRPO_RTOL - (g - fd).abs() / scale);
                }
                _ => t.flag(false),
            }
        }
    })
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.samples == 0 {
        return Err(Error::InvalidConfig("samples must be >= 1".into()));
    }
    let mut properties = Vec::new();
    if matches!(suite, Suite::Bounds | Suite::All) {
        properties.extend([
            check_epsilon_precondition(opts),
            check_info_gain_bound(opts),
            check_correction_upper_bound(opts),
            check_correction_zero_at_saturation(opts),
            check_correction_lower_bound(opts),
            check_gate_monotone(opts),
            check_decomposition(opts),
        ]);
    }
    if matches!(suite, Suite::Lemmas | Suite::All) {
        properties.extend([
            check_linearity(opts),
            check_one_step_optimum(opts),
            check_coverage_range(opts),
            check_coverage_lower_bound(opts),
        ]);
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        properties.extend([
            check_correction_derivative(opts),
            check_derivative_boundary(opts),
            check_grpo_gradient(opts),
        ]);
    }
    Ok(VerifyReport {
        suite,
        samples: opts.samples,
        seed: opts.seed,
        pass: properties.iter().all(PropertyReport::holds),
        properties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_small_samples() {
        let report = run_suite(Suite::All, &VerifyOptions::new(300, 5)).unwrap();
        for p in &report.properties {
            assert!(p.holds(), "{p:?}");
        }
        assert!(report.pass);
    }

    #[test]
    fn zero_samples_is_rejected() {
        assert!(run_suite(Suite::Bounds, &VerifyOptions::new(0, 0)).is_err());
    }

    #[test]
    fn negative_epsilon_is_reported() {
        let opts = VerifyOptions {
            epsilon_override: Some(-0.5),
            ..VerifyOptions::new(200, 1)
        };
        let report = run_suite(Suite::Bounds, &opts).unwrap();
        assert!(!report.pass);
        let pre = &report.properties[0];
        assert_eq!(pre.name, "epsilon_positive");
        assert_eq!(pre.violations, pre.checked);
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(simplex_grid(2).len(), 21);
        assert_eq!(simplex_grid(3).len(), 231);
        for w in simplex_grid(4) {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_are_seed_deterministic() {
        let a = run_suite(Suite::Lemmas, &VerifyOptions::new(2500, 9)).unwrap();
        let b = run_suite(Suite::Lemmas, &VerifyOptions::new(2500, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in [Suite::Bounds, Suite::Lemmas, Suite::Gradients, Suite::All] {
            assert_eq!(s.to_string().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
