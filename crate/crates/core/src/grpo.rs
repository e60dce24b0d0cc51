//! Reference-augmented GRPO.
//!
//! For each prompt, `G` continuations are sampled from the actor and the
//! dataset reference is appended to form the augmented group. Every member is
//! scored with the same sequence reward under the frozen specialist and
//! generalist, advantages are normalised with the augmented group's mean and
//! population standard deviation, and the sequence advantage is broadcast to
//! every token of the clipped surrogate:
//!
//! ```text
//! loss = −mean_t[min(ρ_t Â, clip(ρ_t, 1−ε, 1+ε) Â)] + β · mean_t[r_t − 1 − ln r_t]
//! ρ_t  = π_θ(y_t) / π_old(y_t)        r_t = π_ref(y_t) / π_θ(y_t)
//! ```
//!
//! The mean runs over all tokens of all gradient-carrying samples in the
//! batch. By default the reference only shifts the group statistics; with
//! `train_on_reference` it also enters the loss as an off-policy sample whose
//! behaviour policy is the specialist.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{entropy, kl_divergence, PolicyParams};
use crate::reward::{coverage, sequence_reward, RewardConfig, TokenRewardTrace};
use crate::rng;
use crate::sft::{tree_sum, tree_sum_scalars};
use crate::vocab::{tokenize, TokenSeq, TokenizerMode, Vocabulary};

/// Population standard deviations below this floor yield zero advantages.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub reward: RewardConfig,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
    pub train_on_reference: bool,
    /// Prompts drawn (without replacement) per update step.
    pub prompts_per_step: usize,
    /// Heavy-ball momentum on the update; 0 is plain gradient descent.
    pub momentum: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.001,
            learning_rate: 0.5,
            steps: 400,
            reward: RewardConfig::default(),
            temperature: 0.7,
            max_len: 16,
            seed: 0,
            train_on_reference: false,
            prompts_per_step: 4,
            momentum: 0.0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.group_size == 0 {
            return bad("group_size must be >= 1");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be > 0");
        }
        if self.max_len == 0 {
            return bad("max_len must be >= 1");
        }
        if self.prompts_per_step == 0 {
            return bad("prompts_per_step must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        self.reward.validate()
    }
}

/// The frozen reward policies.
#[derive(Debug, Clone, Copy)]
pub struct Scorers<'a> {
    pub specialist: &'a PolicyParams,
    pub generalist: &'a PolicyParams,
}

impl<'a> Scorers<'a> {
    pub fn new(specialist: &'a PolicyParams, generalist: &'a PolicyParams) -> Result<Self> {
        specialist.check_compatible(generalist)?;
        Ok(Scorers {
            specialist,
            generalist,
        })
    }

    /// Scores `tokens` as a continuation of `prompt` at temperature 1.
    pub fn score(
        &self,
        prompt: &[usize],
        tokens: &[usize],
        config: &RewardConfig,
    ) -> Result<TokenRewardTrace> {
        let mut ctx = prompt.to_vec();
        let mut p = Vec::with_capacity(tokens.len());
        let mut q = Vec::with_capacity(tokens.len());
        for &y in tokens {
            p.push(self.specialist.log_prob(&ctx, y)?.exp());
            q.push(self.generalist.log_prob(&ctx, y)?.exp());
            ctx.push(y);
        }
        TokenRewardTrace::from_probs(tokens, &p, &q, config)
    }
}

/// A prompt (no trailing EOS) and its ground-truth continuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub prompt: Vec<usize>,
    pub reference: TokenSeq,
}

#[derive(Deserialize)]
struct PromptPairText {
    prompt: String,
    reference: String,
}

/// Reads JSONL records `{"prompt": text, "reference": text}`.
pub fn load_prompt_pairs(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    mode: TokenizerMode,
) -> Result<Vec<PromptPair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_pairs(&text, vocab, mode)
}

pub fn parse_prompt_pairs(
    text: &str,
    vocab: &Vocabulary,
    mode: TokenizerMode,
) -> Result<Vec<PromptPair>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            line: i + 1,
            message,
        };
        let rec: PromptPairText =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let prompt = if rec.prompt.is_empty() {
            Vec::new()
        } else {
            tokenize(&rec.prompt, vocab, mode)
                .map_err(|e| malformed(e.to_string()))?
                .without_eos(vocab)
                .to_vec()
        };
        let reference =
            tokenize(&rec.reference, vocab, mode).map_err(|e| malformed(e.to_string()))?;
        pairs.push(PromptPair { prompt, reference });
    }
    Ok(pairs)
}

/// Coordinates of a group's random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupStreams {
    pub seed: u64,
    pub step: u64,
    pub slot: u64,
}

impl GroupStreams {
    pub fn rollout(&self, index: usize) -> rand_chacha::ChaCha8Rng {
        rng::stream(
            self.seed,
            rng::label::ROLLOUT,
            &[self.step, self.slot, index as u64],
        )
    }
}

/// `G` rollouts plus the reference, with rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt: Vec<usize>,
    pub rollouts: Vec<TokenSeq>,
    pub reference: TokenSeq,
    /// One trace per rollout, then the reference's trace last.
    pub traces: Vec<TokenRewardTrace>,
    /// `G + 1` sequence rewards, reference last.
    pub rewards: Vec<f64>,
    /// `G + 1` normalised advantages, reference last.
    pub advantages: Vec<f64>,
    /// Actor log-probabilities of each rollout token at collection time.
    pub old_log_probs: Vec<Vec<f64>>,
    /// Specialist log-probabilities of the reference tokens, used as the
    /// behaviour policy when the reference carries gradient.
    pub reference_log_probs: Vec<f64>,
}

impl RolloutGroup {
    pub fn group_size(&self) -> usize {
        self.rollouts.len()
    }

    /// Full decoding contexts at which rollout tokens were generated.
    pub fn rollout_contexts(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.rollouts.iter().flat_map(move |seq| {
            (0..seq.len()).map(move |t| {
                let mut ctx = self.prompt.clone();
                ctx.extend_from_slice(&seq.ids()[..t]);
                ctx
            })
        })
    }
}

/// `Â_i = (R_i − mean) / σ` with population σ; all zero when σ < 1e-8.
pub fn group_advantage(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    // NaN rewards also land here.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(sigma >= SIGMA_FLOOR) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / sigma).collect())
}

/// Samples a group for one prompt and scores it, reference included.
pub fn collect_group(
    actor: &PolicyParams,
    scorers: &Scorers<'_>,
    pair: &PromptPair,
    config: &GrpoConfig,
    streams: GroupStreams,
) -> Result<RolloutGroup> {
    if **actor.vocab() != **scorers.specialist.vocab() {
        return Err(Error::VocabularyMismatch(
            "actor and scorers use different vocabularies".into(),
        ));
    }
    for &id in pair.prompt.iter().chain(pair.reference.ids()) {
        actor.vocab().check_id(id)?;
    }
    let mut rollouts = Vec::with_capacity(config.group_size);
    let mut old_log_probs = Vec::with_capacity(config.group_size);
    let mut traces = Vec::with_capacity(config.group_size + 1);
    for i in 0..config.group_size {
        let seq = actor.sample_rollout(
            &pair.prompt,
            config.temperature,
            config.max_len,
            &mut streams.rollout(i),
        )?;
        let mut ctx = pair.prompt.clone();
        let mut lps = Vec::with_capacity(seq.len());
        for &y in seq.ids() {
            lps.push(actor.log_prob(&ctx, y)?);
            ctx.push(y);
        }
        traces.push(scorers.score(&pair.prompt, seq.ids(), &config.reward)?);
        rollouts.push(seq);
        old_log_probs.push(lps);
    }
    let ref_trace = scorers.score(&pair.prompt, pair.reference.ids(), &config.reward)?;
    let reference_log_probs = ref_trace.records.iter().map(|r| r.p.ln()).collect();
    traces.push(ref_trace);
    let rewards = traces
        .iter()
        .map(sequence_reward)
        .collect::<Result<Vec<_>>>()?;
    let advantages = group_advantage(&rewards)?;
    Ok(RolloutGroup {
        prompt: pair.prompt.clone(),
        rollouts,
        reference: pair.reference.clone(),
        traces,
        rewards,
        advantages,
        old_log_probs,
        reference_log_probs,
    })
}

/// Loss value, its exact gradient, and surrogate diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub kl_estimate: f64,
    pub num_tokens: usize,
}

struct Partial {
    objective: f64,
    kl: f64,
    ratio: f64,
    clipped: usize,
    tokens: usize,
    grad: Vec<f64>,
}

fn group_partial(
    actor: &PolicyParams,
    ref_policy: &PolicyParams,
    group: &RolloutGroup,
    config: &GrpoConfig,
) -> Result<Partial> {
    let n = actor.num_params();
    let mut part = Partial {
        objective: 0.0,
        kl: 0.0,
        ratio: 0.0,
        clipped: 0,
        tokens: 0,
        grad: vec![0.0; n],
    };
    let g = group.group_size();
    let mut samples: Vec<(&[usize], &[f64], f64)> = (0..g)
        .map(|i| {
            (
                group.rollouts[i].ids(),
                group.old_log_probs[i].as_slice(),
                group.advantages[i],
            )
        })
        .collect();
    if config.train_on_reference {
        samples.push((
            group.reference.ids(),
            group.reference_log_probs.as_slice(),
            group.advantages[g],
        ));
    }
    let (lo, hi) = (1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let v = actor.vocab_size();
    let mut dlogits = vec![0.0; v];
    for (tokens, old, adv) in samples {
        let mut ctx = group.prompt.clone();
        for (t, &y) in tokens.iter().enumerate() {
            let lps = actor.log_probs(&ctx)?;
            let lp = lps[y];
            let ratio = (lp - old[t]).exp();
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(lo, hi) * adv;
            // d(objective)/d(lp): the unclipped branch carries ρÂ, the clipped
            // branch is flat in θ.
            let d_obj = if unclipped <= clipped {
                part.objective += unclipped;
                unclipped
            } else {
                part.objective += clipped;
                part.clipped += 1;
                0.0
            };
            let mut d_kl = 0.0;
            if config.kl_beta > 0.0 {
                let log_r = ref_policy.log_prob(&ctx, y)? - lp;
                let r = log_r.exp();
                part.kl += r - 1.0 - log_r;
                d_kl = 1.0 - r;
            }
            part.ratio += ratio;
            part.tokens += 1;
            let coef = -d_obj + config.kl_beta * d_kl;
            if coef != 0.0 {
                for (i, d) in dlogits.iter_mut().enumerate() {
                    let p = lps[i].exp();
                    *d = coef * (if i == y { 1.0 } else { 0.0 } - p);
                }
                actor.add_logit_grad(&ctx, &dlogits, &mut part.grad)?;
            }
            ctx.push(y);
        }
    }
    Ok(part)
}

/// Clipped-surrogate loss with KL penalty over a batch of groups.
pub fn grpo_batch_loss(
    actor: &PolicyParams,
    ref_policy: &PolicyParams,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<LossOutput> {
    actor.check_compatible(ref_policy)?;
    let parts = groups
        .par_iter()
        .map(|g| group_partial(actor, ref_policy, g, config))
        .collect::<Result<Vec<_>>>()?;
    let tokens: usize = parts.iter().map(|p| p.tokens).sum();
    let clipped: usize = parts.iter().map(|p| p.clipped).sum();
    let objective = tree_sum_scalars(parts.iter().map(|p| p.objective).collect());
    let kl = tree_sum_scalars(parts.iter().map(|p| p.kl).collect());
    let ratio = tree_sum_scalars(parts.iter().map(|p| p.ratio).collect());
    let n_params = actor.num_params();
    let mut grad = tree_sum(parts.into_iter().map(|p| p.grad).collect(), n_params);
    if tokens == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            grad,
            mean_ratio: 1.0,
            clip_fraction: 0.0,
            kl_estimate: 0.0,
            num_tokens: 0,
        });
    }
    let n = tokens as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    let kl_estimate = kl / n;
    Ok(LossOutput {
        loss: -objective / n + config.kl_beta * kl_estimate,
        grad,
        mean_ratio: ratio / n,
        clip_fraction: clipped as f64 / n,
        kl_estimate,
        num_tokens: tokens,
    })
}

/// Loss for a single group.
pub fn grpo_loss(
    actor: &PolicyParams,
    ref_policy: &PolicyParams,
    group: &RolloutGroup,
    config: &GrpoConfig,
) -> Result<LossOutput> {
    grpo_batch_loss(actor, ref_policy, std::slice::from_ref(group), config)
}

/// Diagnostics for one training step, measured before its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub kl: f64,
    pub coverage: f64,
    pub clip_frac: f64,
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| crate::json::to_line(r).expect("step record serializes") + "\n")
            .collect()
    }

    /// Parses JSONL, reporting the 1-based line of the first bad record.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: StepRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(RunLog { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Final actor and the per-step log.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: PolicyParams,
    pub log: RunLog,
}

fn prompt_batch(dataset_len: usize, config: &GrpoConfig, step: usize) -> Vec<usize> {
    if dataset_len <= config.prompts_per_step {
        return (0..dataset_len).collect();
    }
    let mut r = rng::stream(config.seed, rng::label::PROMPT_BATCH, &[step as u64]);
    index::sample(&mut r, dataset_len, config.prompts_per_step).into_vec()
}

/// Mean actor entropy and mean specialist coverage over the contexts where
/// rollout tokens were generated.
fn visit_stats(
    actor: &PolicyParams,
    specialist: &PolicyParams,
    groups: &[RolloutGroup],
    lambda: f64,
) -> Result<(f64, f64, usize)> {
    let parts = groups
        .par_iter()
        .map(|g| {
            let (mut h, mut s, mut n) = (0.0, 0.0, 0usize);
            for ctx in g.rollout_contexts() {
                h += entropy(&actor.next_token_dist(&ctx, 1.0)?);
                s += coverage(&specialist.next_token_dist(&ctx, 1.0)?, lambda);
                n += 1;
            }
            Ok((h, s, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let n: usize = parts.iter().map(|p| p.2).sum();
    let h = tree_sum_scalars(parts.iter().map(|p| p.0).collect());
    let s = tree_sum_scalars(parts.iter().map(|p| p.1).collect());
    Ok((h, s, n))
}

/// Runs `config.steps` reference-augmented GRPO updates from `actor_init`.
/// The KL anchor is `actor_init`; the scorers are never modified.
pub fn train(
    actor_init: &PolicyParams,
    scorers: &Scorers<'_>,
    dataset: &[PromptPair],
    config: &GrpoConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if **actor_init.vocab() != **scorers.specialist.vocab() {
        return Err(Error::VocabularyMismatch(
            "actor and scorers use different vocabularies".into(),
        ));
    }
    if dataset.is_empty() && config.steps > 0 {
        return Err(Error::InvalidConfig("no prompts to train on".into()));
    }
    let ref_policy = actor_init.clone();
    let mut actor = actor_init.clone();
    let mut velocity = vec![0.0; actor.num_params()];
    let mut log = RunLog::default();

    for step in 0..config.steps {
        let batch = prompt_batch(dataset.len(), config, step);
        let groups = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &idx)| {
                let streams = GroupStreams {
                    seed: config.seed,
                    step: step as u64,
                    slot: slot as u64,
                };
                collect_group(&actor, scorers, &dataset[idx], config, streams)
            })
            .collect::<Result<Vec<_>>>()?;

        let (h_sum, s_sum, visits) =
            visit_stats(&actor, scorers.specialist, &groups, config.reward.lambda)?;
        let rollout_rewards: Vec<f64> = groups
            .iter()
            .flat_map(|g| g.rewards[..g.group_size()].iter().copied())
            .collect();
        let mean_reward = rollout_rewards.iter().sum::<f64>() / rollout_rewards.len() as f64;

        let out = grpo_batch_loss(&actor, &ref_policy, &groups, config)?;
        log.records.push(StepRecord {
            step,
            mean_reward,
            mean_entropy: h_sum / visits.max(1) as f64,
            kl: out.kl_estimate,
            coverage: s_sum / visits.max(1) as f64,
            clip_frac: out.clip_fraction,
        });

        for ((v, m), g) in actor
            .values_mut()
            .iter_mut()
            .zip(velocity.iter_mut())
            .zip(&out.grad)
        {
            *m = config.momentum * *m + g;
            *v -= config.learning_rate * *m;
        }
    }
    Ok(TrainOutput { params: actor, log })
}

/// Mean exact KL(a ‖ b) over explicit contexts.
pub fn exact_kl(a: &PolicyParams, b: &PolicyParams, contexts: &[Vec<usize>]) -> Result<f64> {
    if contexts.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ctx in contexts {
        total += kl_divergence(&a.next_token_dist(ctx, 1.0)?, &b.next_token_dist(ctx, 1.0)?);
    }
    Ok(total / contexts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;
    use crate::reward::RewardVariant;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn vocab() -> Arc<Vocabulary> {
        Arc::new(Vocabulary::from_content(["a", "b", "c"]).unwrap())
    }

    fn random_policy(seed: u64, scale: f64) -> PolicyParams {
        PolicyParams::random(
            PolicyKind::TabularNgram { order: 2 },
            vocab(),
            scale,
            &mut rng::stream(seed, rng::label::INIT, &[]),
        )
        .unwrap()
    }

    fn pair() -> PromptPair {
        let v = vocab();
        PromptPair {
            prompt: vec![0],
            reference: TokenSeq::new(vec![1, 2, 1, 3], &v).unwrap(),
        }
    }

    fn streams(seed: u64) -> GroupStreams {
        GroupStreams {
            seed,
            step: 0,
            slot: 0,
        }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantage(&[0.3; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(group_advantage(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0]);
        let a = group_advantage(&[2.0, 0.0, 1.0, 1.0]).unwrap();
        let s2 = 2f64.sqrt();
        assert_relative_eq!(a[0], s2, max_relative = 1e-15);
        assert_relative_eq!(a[1], -s2, max_relative = 1e-15);
        assert_eq!(a[2], 0.0);
        assert_eq!(a[3], 0.0);
        assert!(group_advantage(&[1.0]).is_err());
    }

    #[test]
    fn reference_above_all_rollouts_makes_rollout_advantages_negative() {
        let rewards = [-1.0, -1.1, -1.3, -0.2];
        let a = group_advantage(&rewards).unwrap();
        assert!(a[..3].iter().all(|&x| x < 0.0));
        assert!(a[3] > 0.0);
    }

    #[test]
    fn deterministic_actor_with_group_of_one() {
        let v = vocab();
        let mut actor = PolicyParams::zeros(PolicyKind::TabularNgram { order: 2 }, v).unwrap();
        // after 'a' emit 'b', after 'b' emit EOS
        actor.values_mut()[1] = 60.0;
        actor.values_mut()[4 + 3] = 60.0;
        let s = random_policy(1, 1.0);
        let b = random_policy(2, 1.0);
        let scorers = Scorers::new(&s, &b).unwrap();
        let cfg = GrpoConfig {
            group_size: 1,
            ..Default::default()
        };
        let g = collect_group(&actor, &scorers, &pair(), &cfg, streams(0)).unwrap();
        assert_eq!(g.rollouts.len(), 1);
        assert_eq!(g.rollouts[0].ids(), &[1, 3]);
        assert_eq!(g.rewards.len(), 2);
        assert_eq!(g.traces.len(), 2);
    }

    #[test]
    fn group_rewards_match_independent_recomputation() {
        let actor = random_policy(3, 1.0);
        let s = random_policy(4, 1.5);
        let b = random_policy(5, 1.5);
        let scorers = Scorers::new(&s, &b).unwrap();
        let cfg = GrpoConfig::default();
        let g = collect_group(&actor, &scorers, &pair(), &cfg, streams(7)).unwrap();
        let again = collect_group(&actor, &scorers, &pair(), &cfg, streams(7)).unwrap();
        assert_eq!(g, again);

        let seqs: Vec<&[usize]> = g
            .rollouts
            .iter()
            .map(|r| r.ids())
            .chain(std::iter::once(g.reference.ids()))
            .collect();
        for (seq, &reward) in seqs.iter().zip(&g.rewards) {
            let mut ctx = g.prompt.clone();
            let mut total = 0.0;
            for &y in seq.iter() {
                let p = s.next_token_dist(&ctx, 1.0).unwrap().probs()[y];
                let q = b.next_token_dist(&ctx, 1.0).unwrap().probs()[y];
                let phi = ((p + 1e-5) / (q + 1e-5)).ln();
                total += p.ln() + 3.0 * (1.0 - p).powi(2) * phi;
                ctx.push(y);
            }
            assert_relative_eq!(reward, total / seq.len() as f64, max_relative = 1e-10);
        }
        let mean: f64 = g.advantages.iter().sum::<f64>() / g.advantages.len() as f64;
        assert!(mean.abs() <= 1e-9);
    }

    #[test]
    fn unchanged_actor_gives_reinforce_gradient() {
        let actor = random_policy(6, 1.0);
        let s = random_policy(7, 1.5);
        let b = random_policy(8, 1.5);
        let scorers = Scorers::new(&s, &b).unwrap();
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..Default::default()
        };
        let g = collect_group(&actor, &scorers, &pair(), &cfg, streams(1)).unwrap();
        let out = grpo_loss(&actor, &actor, &g, &cfg).unwrap();
        assert_eq!(out.mean_ratio, 1.0);
        assert_eq!(out.clip_fraction, 0.0);

        let mut reinforce = vec![0.0; actor.num_params()];
        let mut n = 0usize;
        let mut adv_sum = 0.0;
        for (i, seq) in g.rollouts.iter().enumerate() {
            let mut ctx = g.prompt.clone();
            for &y in seq.ids() {
                actor
                    .add_log_prob_grad(&ctx, y, -g.advantages[i], &mut reinforce)
                    .unwrap();
                adv_sum += g.advantages[i];
                n += 1;
                ctx.push(y);
            }
        }
        assert_relative_eq!(out.loss, -adv_sum / n as f64, epsilon = 1e-12);
        for (a, b) in out.grad.iter().zip(&reinforce) {
            assert!((a - b / n as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_group_without_kl_is_inert() {
        let actor = random_policy(9, 1.0);
        let cfg = GrpoConfig {
            kl_beta: 0.0,
            ..Default::default()
        };
        let scorers = Scorers::new(&actor, &actor).unwrap();
        let mut g = collect_group(&actor, &scorers, &pair(), &cfg, streams(2)).unwrap();
        g.advantages.iter_mut().for_each(|a| *a = 0.0);
        let out = grpo_loss(&actor, &actor, &g, &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn run_log_round_trip_and_malformed_line() {
        let log = RunLog {
            records: vec![
                StepRecord {
                    step: 0,
                    mean_reward: -1.25,
                    mean_entropy: 0.1,
                    kl: 0.0,
                    coverage: 0.3,
                    clip_frac: 0.0,
                },
                StepRecord {
                    step: 1,
                    mean_reward: -1.0 / 3.0,
                    mean_entropy: 0.2,
                    kl: 1e-7,
                    coverage: 0.25,
                    clip_frac: 0.5,
                },
            ],
        };
        assert_eq!(RunLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
        let bad = log.to_jsonl() + "{\"step\": 2}\n";
        match RunLog::from_jsonl(&bad) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_steps_leave_actor_unchanged() {
        let actor = random_policy(10, 1.0);
        let scorers = Scorers::new(&actor, &actor).unwrap();
        let cfg = GrpoConfig {
            steps: 0,
            ..Default::default()
        };
        let out = train(&actor, &scorers, &[pair()], &cfg).unwrap();
        assert_eq!(out.params, actor);
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_scorers_frozen() {
        let actor = random_policy(11, 1.0);
        let s = random_policy(12, 1.0);
        let b = random_policy(13, 1.0);
        let (s0, b0) = (s.clone(), b.clone());
        let scorers = Scorers::new(&s, &b).unwrap();
        let cfg = GrpoConfig {
            steps: 6,
            ..Default::default()
        };
        let data = vec![
            pair(),
            PromptPair {
                prompt: vec![2],
                ..pair()
            },
        ];
        let x = train(&actor, &scorers, &data, &cfg).unwrap();
        let y = train(&actor, &scorers, &data, &cfg).unwrap();
        assert_eq!(x.params, y.params);
        assert_eq!(x.log.to_jsonl(), y.log.to_jsonl());
        assert_eq!(x.log.len(), 6);
        assert_eq!(s, s0);
        assert_eq!(b, b0);
    }

    #[test]
    fn config_validation() {
        assert!(GrpoConfig::default().validate().is_ok());
        for bad in [
            GrpoConfig {
                group_size: 0,
                ..Default::default()
            },
            GrpoConfig {
                clip_eps: 1.0,
                ..Default::default()
            },
            GrpoConfig {
                kl_beta: -1.0,
                ..Default::default()
            },
            GrpoConfig {
                temperature: 0.0,
                ..Default::default()
            },
            GrpoConfig {
                max_len: 0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let cfg: GrpoConfig = serde_json::from_str(
            r#"{"group_size": 4, "reward": {"variant": "endor"}, "train_on_reference": true}"#,
        )
        .unwrap();
        assert_eq!(cfg.group_size, 4);
        assert_eq!(cfg.reward.variant, RewardVariant::Endor);
        assert_eq!(cfg.reward.k, 3.0);
        assert!(cfg.train_on_reference);
        assert!(serde_json::from_str::<GrpoConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn prompt_pairs_parse() {
        let v = vocab();
        let pairs = parse_prompt_pairs(
            "{\"prompt\": \"ab\", \"reference\": \"cab\"}\n\n{\"prompt\": \"\", \"reference\": \"a\"}\n",
            &v,
            TokenizerMode::Char,
        )
        .unwrap();
        assert_eq!(pairs[0].prompt, vec![0, 1]);
        assert_eq!(pairs[0].reference.ids(), &[2, 0, 1, 3]);
        assert!(pairs[1].prompt.is_empty());
        match parse_prompt_pairs(
            "{\"prompt\": \"z\", \"reference\": \"a\"}",
            &v,
            TokenizerMode::Char,
        ) {
            Err(Error::Malformed { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
