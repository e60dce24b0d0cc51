//! The reward kernel.
//!
//! With `p = π_s(y|s)` the specialist probability and `q = π_b(y|s)` the
//! generalist probability of a generated token:
//!
//! ```text
//! endor  = ln p
//! phi    = ln((p + ε) / (q + ε))
//! gate   = (1 − p)^λ
//! C(p)   = gate · phi
//! tcer   = ln p + k · C(p)
//! S(s)   = Σ_v π_s(v|s) (1 − π_s(v|s))^λ
//! ```
//!
//! All logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::TokenDist;

/// Which per-token reward drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardVariant {
    Endor,
    #[default]
    Tcer,
}

impl std::str::FromStr for RewardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "endor" => Ok(RewardVariant::Endor),
            "tcer" => Ok(RewardVariant::Tcer),
            other => Err(Error::InvalidConfig(format!(
                "unknown reward variant {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for RewardVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardVariant::Endor => "endor",
            RewardVariant::Tcer => "tcer",
        })
    }
}

/// Reward hyperparameters. Defaults: TCER with `k = 3`, `λ = 2`, `ε = 1e-5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub variant: RewardVariant,
    pub k: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            variant: RewardVariant::Tcer,
            k: 3.0,
            lambda: 2.0,
            epsilon: 1e-5,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "k must be >= 0, got {}",
                self.k
            )));
        }
        Ok(())
    }

    pub fn with_variant(self, variant: RewardVariant) -> Self {
        RewardConfig { variant, ..self }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} outside [0, 1]")))
    }
}

/// `ln p`; the confidence (endogenous) reward.
pub fn endor_reward(p: f64) -> Result<f64> {
    check_prob("p", p)?;
    if p == 0.0 {
        return Err(Error::Domain(
            "endogenous reward of a zero-probability token".into(),
        ));
    }
    Ok(p.ln())
}

/// Smoothed information gain `ln((p + ε) / (q + ε))`.
pub fn info_gain(p: f64, q: f64, epsilon: f64) -> f64 {
    ((p + epsilon) / (q + epsilon)).ln()
}

/// Uniform bound `ln((1 + ε) / ε)` on `|info_gain|`.
pub fn log_ratio_bound(epsilon: f64) -> f64 {
    ((1.0 + epsilon) / epsilon).ln()
}

/// Triviality gate `(1 − p)^λ`.
pub fn gate_weight(p: f64, lambda: f64) -> f64 {
    (1.0 - p).powf(lambda)
}

/// Gated correction `C(p) = (1 − p)^λ · ln((p + ε) / (q + ε))`.
pub fn correction_term(p: f64, q: f64, lambda: f64, epsilon: f64) -> f64 {
    gate_weight(p, lambda) * info_gain(p, q, epsilon)
}

/// Closed-form `dC/dp = −λ(1−p)^{λ−1} ln((p+ε)/(q+ε)) + (1−p)^λ / (p+ε)`.
pub fn correction_derivative(p: f64, q: f64, lambda: f64, epsilon: f64) -> Result<f64> {
    check_prob("p", p)?;
    check_prob("q", q)?;
    if p == 1.0 {
        if lambda < 1.0 {
            return Err(Error::Domain(format!(
                "dC/dp diverges at p = 1 for lambda = {lambda} < 1"
            )));
        }
        if lambda == 1.0 {
            return Ok(-info_gain(p, q, epsilon));
        }
        return Ok(0.0);
    }
    let one_minus = 1.0 - p;
    let first = -lambda * one_minus.powf(lambda - 1.0) * info_gain(p, q, epsilon);
    let second = one_minus.powf(lambda) / (p + epsilon);
    Ok(first + second)
}

/// `ln p + k · C(p)`.
pub fn tcer_reward(p: f64, q: f64, config: &RewardConfig) -> Result<f64> {
    check_prob("q", q)?;
    let endor = endor_reward(p)?;
    Ok(endor + config.k * correction_term(p, q, config.lambda, config.epsilon))
}

/// One scored token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub token: usize,
    pub p: f64,
    pub q: f64,
    pub endor: f64,
    pub phi: f64,
    pub gate: f64,
    pub tcer: f64,
}

impl TokenRecord {
    pub fn reward(&self, variant: RewardVariant) -> f64 {
        match variant {
            RewardVariant::Endor => self.endor,
            RewardVariant::Tcer => self.tcer,
        }
    }
}

/// Per-token reward records for one sequence, all columns populated.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenRewardTrace {
    pub records: Vec<TokenRecord>,
    pub config: RewardConfig,
}

impl TokenRewardTrace {
    /// Scores tokens given their specialist (`p`) and generalist (`q`)
    /// probabilities.
    pub fn from_probs(
        tokens: &[usize],
        p: &[f64],
        q: &[f64],
        config: &RewardConfig,
    ) -> Result<Self> {
        config.validate()?;
        if tokens.len() != p.len() || p.len() != q.len() {
            return Err(Error::LengthMismatch(format!(
                "tokens {}, p {}, q {}",
                tokens.len(),
                p.len(),
                q.len()
            )));
        }
        let records = tokens
            .iter()
            .zip(p.iter().zip(q))
            .map(|(&token, (&p, &q))| {
                check_prob("q", q)?;
                let endor = endor_reward(p)?;
                let phi = info_gain(p, q, config.epsilon);
                let gate = gate_weight(p, config.lambda);
                let tcer = endor + config.k * (gate * phi);
                Ok(TokenRecord {
                    token,
                    p,
                    q,
                    endor,
                    phi,
                    gate,
                    tcer,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TokenRewardTrace {
            records,
            config: *config,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self, variant: RewardVariant) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(move |r| r.reward(variant))
    }

    /// Mean per-token reward of `variant`.
    pub fn mean_reward(&self, variant: RewardVariant) -> Result<f64> {
        if self.records.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(self.rewards(variant).sum::<f64>() / self.records.len() as f64)
    }
}

/// Length-normalised mean of the active variant's token rewards.
pub fn sequence_reward(trace: &TokenRewardTrace) -> Result<f64> {
    trace.mean_reward(trace.config.variant)
}

/// Mean rewards of one sentence under both variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub endor: f64,
    pub tcer: f64,
}

/// Checks that half-open `[start, end)` ranges are non-empty, ordered,
/// non-overlapping and inside `0..len`.
pub fn validate_ranges(ranges: &[(usize, usize)], len: usize) -> Result<()> {
    let mut prev_end = 0;
    for (i, &(start, end)) in ranges.iter().enumerate() {
        if start >= end {
            return Err(Error::InvalidRange(format!(
                "range {i} [{start}, {end}) is empty"
            )));
        }
        if end > len {
            return Err(Error::InvalidRange(format!(
                "range {i} [{start}, {end}) exceeds length {len}"
            )));
        }
        if i > 0 && start < prev_end {
            return Err(Error::InvalidRange(format!(
                "range {i} [{start}, {end}) overlaps or precedes the previous range"
            )));
        }
        prev_end = end;
    }
    Ok(())
}

/// Mean token reward inside each half-open `[start, end)` range.
pub fn sentence_aggregate(
    trace: &TokenRewardTrace,
    ranges: &[(usize, usize)],
) -> Result<Vec<SentenceScore>> {
    validate_ranges(ranges, trace.len())?;
    Ok(ranges
        .iter()
        .map(|&(start, end)| {
            let slice = &trace.records[start..end];
            let n = slice.len() as f64;
            SentenceScore {
                endor: slice.iter().map(|r| r.endor).sum::<f64>() / n,
                tcer: slice.iter().map(|r| r.tcer).sum::<f64>() / n,
            }
        })
        .collect())
}

/// Expected gate under the specialist's own distribution.
pub fn coverage(dist_s: &TokenDist, lambda: f64) -> f64 {
    dist_s
        .probs()
        .iter()
        .map(|&p| p * gate_weight(p, lambda))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// Probability mass of tokens with `π_s(v) ≤ 1 − δ`.
pub fn non_saturated_mass(dist_s: &TokenDist, delta: f64) -> f64 {
    dist_s.probs().iter().filter(|&&p| p <= 1.0 - delta).sum()
}

/// One-step objective `E_{y∼π}[ln π_s(y)]`; zero-mass entries contribute 0.
pub fn one_step_objective(pi: &TokenDist, dist_s: &TokenDist) -> f64 {
    pi.probs()
        .iter()
        .zip(dist_s.probs())
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &ps)| w * ps.ln())
        .sum()
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(dist: &TokenDist) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > dist.probs()[best] {
            best = i;
        }
    }
    best
}

/// The deterministic maximiser of the one-step EndoR objective.
pub fn one_step_optimal_policy(dist_s: &TokenDist) -> TokenDist {
    TokenDist::delta(dist_s.len(), argmax(dist_s))
}

/// Mean rewards of a deterministic-style and a diverse-style trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub r_det: f64,
    pub r_diverse: f64,
    pub gap: f64,
}

/// Compares the mean rewards of two traces under `config`'s variant.
pub fn diversity_gap_check(
    det_trace: &TokenRewardTrace,
    diverse_trace: &TokenRewardTrace,
    config: &RewardConfig,
) -> Result<GapReport> {
    let r_det = det_trace.mean_reward(config.variant)?;
    let r_diverse = diverse_trace.mean_reward(config.variant)?;
    Ok(GapReport {
        r_det,
        r_diverse,
        gap: r_diverse - r_det,
    })
}

/// `k · σ^{λ+1} · E|φ|` over a trace, with σ the population standard
/// deviation of its `p` values.
pub fn diversity_gap_bound(trace: &TokenRewardTrace, config: &RewardConfig) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = trace.len() as f64;
    let mean = trace.records.iter().map(|r| r.p).sum::<f64>() / n;
    let var = trace
        .records
        .iter()
        .map(|r| (r.p - mean).powi(2))
        .sum::<f64>()
        / n;
    let mean_abs_phi = trace.records.iter().map(|r| r.phi.abs()).sum::<f64>() / n;
    Ok(config.k * var.sqrt().powf(config.lambda + 1.0) * mean_abs_phi)
}
