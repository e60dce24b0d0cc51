//! Softmax sequence policies with exact log-probabilities, sampling and
//! analytic gradients.
//!
//! Two kinds are supported:
//!
//! - **Tabular n-gram** of order `n`: one logit row per (n-1)-token context.
//!   Contexts shorter than `n-1` are left-padded with a start symbol, so the
//!   table has `(V+1)^(n-1)` rows of `V` logits.
//! - **Linear neural** with window `w` and hidden size `h`: token embeddings
//!   are mean-pooled over the last `w` context tokens and projected to logits.
//!   Layout is `[embed (V×h) | out (V×h) | bias (V)]`. An empty context pools
//!   to the zero vector.
//!
//! Contexts longer than the policy's window are truncated from the left.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenSeq, Vocabulary};

/// Largest parameter vector the crate will allocate.
const MAX_PARAMS: usize = 1 << 26;

/// Tolerance on the total mass of a [`TokenDist`].
pub const DIST_SUM_TOL: f64 = 1e-9;

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDist {
    probs: Vec<f64>,
}

impl TokenDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidDistribution(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DIST_SUM_TOL {
            return Err(Error::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(TokenDist { probs })
    }

    /// Point mass on `index`.
    pub fn delta(size: usize, index: usize) -> Self {
        assert!(index < size);
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        TokenDist { probs }
    }

    pub fn uniform(size: usize) -> Self {
        TokenDist {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_deterministic(&self) -> bool {
        self.probs.contains(&1.0)
    }

    /// Draws an index by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap above the accumulated mass
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("distribution has positive mass")
    }
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(dist: &TokenDist) -> f64 {
    let h: f64 = dist
        .probs()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// KL(a ‖ b) in nats. Infinite when `a` puts mass where `b` has none.
pub fn kl_divergence(a: &TokenDist, b: &TokenDist) -> f64 {
    a.probs()
        .iter()
        .zip(b.probs())
        .filter(|(&pa, _)| pa > 0.0)
        .map(|(&pa, &pb)| {
            if pb == 0.0 {
                f64::INFINITY
            } else {
                pa * (pa / pb).ln()
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// In-place log-softmax.
pub fn log_softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter_mut().for_each(|v| *v -= lse);
}

/// Softmax of `z` (already scaled by any temperature).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Which parameterisation a policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    TabularNgram { order: usize },
    LinearNeural { window: usize, hidden: usize },
}

impl Default for PolicyKind {
    fn default() -> Self {
        PolicyKind::TabularNgram { order: 2 }
    }
}

impl PolicyKind {
    /// Number of parameters for a vocabulary of `vocab_size` tokens.
    pub fn param_count(&self, vocab_size: usize) -> Result<usize> {
        let count = match *self {
            PolicyKind::TabularNgram { order } => {
                if order == 0 {
                    return Err(Error::InvalidParams("n-gram order must be >= 1".into()));
                }
                let exp = u32::try_from(order - 1)
                    .map_err(|_| Error::InvalidParams("n-gram order too large".into()))?;
                (vocab_size + 1)
                    .checked_pow(exp)
                    .and_then(|rows| rows.checked_mul(vocab_size))
            }
            PolicyKind::LinearNeural { window, hidden } => {
                if window == 0 || hidden == 0 {
                    return Err(Error::InvalidParams(
                        "window and hidden size must be >= 1".into(),
                    ));
                }
                vocab_size
                    .checked_mul(hidden)
                    .and_then(|vh| vh.checked_mul(2))
                    .and_then(|n| n.checked_add(vocab_size))
            }
        };
        match count {
            Some(n) if n <= MAX_PARAMS => Ok(n),
            _ => Err(Error::InvalidParams("parameter count too large".into())),
        }
    }

    /// Number of trailing context tokens the policy conditions on.
    pub fn window(&self) -> usize {
        match *self {
            PolicyKind::TabularNgram { order } => order - 1,
            PolicyKind::LinearNeural { window, .. } => window,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            PolicyKind::TabularNgram { .. } => "tabular_ngram",
            PolicyKind::LinearNeural { .. } => "linear_neural",
        }
    }
}

/// The conditioning context of one decoding step: prompt followed by the
/// tokens generated so far.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Context {
    pub prompt_ids: Vec<usize>,
    pub generated_ids: Vec<usize>,
}

impl Context {
    pub fn new(prompt_ids: Vec<usize>, generated_ids: Vec<usize>) -> Self {
        Context {
            prompt_ids,
            generated_ids,
        }
    }

    /// `prompt ++ generated`.
    pub fn ids(&self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.prompt_ids.len() + self.generated_ids.len());
        ids.extend_from_slice(&self.prompt_ids);
        ids.extend_from_slice(&self.generated_ids);
        ids
    }
}

/// Parameters of a softmax sequence policy over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    kind: PolicyKind,
    vocab: Arc<Vocabulary>,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn new(kind: PolicyKind, vocab: Arc<Vocabulary>, values: Vec<f64>) -> Result<Self> {
        let expected = kind.param_count(vocab.size())?;
        if values.len() != expected {
            return Err(Error::InvalidParams(format!(
                "{} values for a {} policy expecting {expected}",
                values.len(),
                kind.name()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        Ok(PolicyParams {
            kind,
            vocab,
            values,
        })
    }

    /// All-zero parameters, i.e. the uniform policy.
    pub fn zeros(kind: PolicyKind, vocab: Arc<Vocabulary>) -> Result<Self> {
        let n = kind.param_count(vocab.size())?;
        Self::new(kind, vocab, vec![0.0; n])
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        kind: PolicyKind,
        vocab: Arc<Vocabulary>,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = kind.param_count(vocab.size())?;
        let values = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self::new(kind, vocab, values)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    /// Errors unless `other` shares this policy's vocabulary and kind.
    pub fn check_compatible(&self, other: &PolicyParams) -> Result<()> {
        if *self.vocab != *other.vocab {
            return Err(Error::VocabularyMismatch(
                "policies use different vocabularies".into(),
            ));
        }
        if self.kind != other.kind {
            return Err(Error::VocabularyMismatch(format!(
                "policy kinds differ: {:?} vs {:?}",
                self.kind, other.kind
            )));
        }
        Ok(())
    }

    fn check_context(&self, ctx: &[usize]) -> Result<()> {
        ctx.iter().try_for_each(|&id| self.vocab.check_id(id))
    }

    fn tabular_row(&self, order: usize, ctx: &[usize]) -> usize {
        let v = self.vocab.size();
        let width = order - 1;
        let pad = v;
        let tail = &ctx[ctx.len().saturating_sub(width)..];
        let mut row = 0usize;
        for i in 0..width {
            let sym = if i + tail.len() < width {
                pad
            } else {
                tail[i + tail.len() - width]
            };
            row = row * (v + 1) + sym;
        }
        row
    }

    fn pooled(&self, window: usize, hidden: usize, ctx: &[usize]) -> Vec<f64> {
        let tail = &ctx[ctx.len().saturating_sub(window)..];
        let mut pooled = vec![0.0; hidden];
        if tail.is_empty() {
            return pooled;
        }
        for &tok in tail {
            let row = &self.values[tok * hidden..(tok + 1) * hidden];
            pooled.iter_mut().zip(row).for_each(|(p, e)| *p += e);
        }
        let scale = 1.0 / tail.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= scale);
        pooled
    }

    /// Raw logits for the next token after `ctx`.
    pub fn logits(&self, ctx: &[usize]) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        let v = self.vocab.size();
        Ok(match self.kind {
            PolicyKind::TabularNgram { order } => {
                let row = self.tabular_row(order, ctx);
                self.values[row * v..(row + 1) * v].to_vec()
            }
            PolicyKind::LinearNeural { window, hidden } => {
                let pooled = self.pooled(window, hidden, ctx);
                let out = &self.values[v * hidden..2 * v * hidden];
                let bias = &self.values[2 * v * hidden..];
                (0..v)
                    .map(|tok| {
                        let w = &out[tok * hidden..(tok + 1) * hidden];
                        bias[tok] + w.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect()
            }
        })
    }

    /// Next-token distribution at the given sampling temperature.
    pub fn next_token_dist(&self, ctx: &[usize], temperature: f64) -> Result<TokenDist> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut z = self.logits(ctx)?;
        if temperature != 1.0 {
            z.iter_mut().for_each(|x| *x /= temperature);
        }
        Ok(TokenDist { probs: softmax(&z) })
    }

    /// Log-probabilities of every next token at temperature 1.
    pub fn log_probs(&self, ctx: &[usize]) -> Result<Vec<f64>> {
        let mut z = self.logits(ctx)?;
        log_softmax_in_place(&mut z);
        Ok(z)
    }

    /// `ln π(y | ctx)` via log-softmax.
    pub fn log_prob(&self, ctx: &[usize], y: usize) -> Result<f64> {
        self.vocab.check_id(y)?;
        Ok(self.log_probs(ctx)?[y])
    }

    /// Accumulates `Σ_v dlogits[v] · ∂logit_v/∂θ` into `grad`.
    pub fn add_logit_grad(&self, ctx: &[usize], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_context(ctx)?;
        let v = self.vocab.size();
        debug_assert_eq!(dlogits.len(), v);
        debug_assert_eq!(grad.len(), self.values.len());
        match self.kind {
            PolicyKind::TabularNgram { order } => {
                let row = self.tabular_row(order, ctx);
                grad[row * v..(row + 1) * v]
                    .iter_mut()
                    .zip(dlogits)
                    .for_each(|(g, d)| *g += d);
            }
            PolicyKind::LinearNeural { window, hidden } => {
                let tail = &ctx[ctx.len().saturating_sub(window)..];
                let pooled = self.pooled(window, hidden, ctx);
                let out_off = v * hidden;
                let bias_off = 2 * v * hidden;
                let mut dpooled = vec![0.0; hidden];
                for tok in 0..v {
                    let d = dlogits[tok];
                    if d == 0.0 {
                        continue;
                    }
                    grad[bias_off + tok] += d;
                    let w = &self.values[out_off + tok * hidden..out_off + (tok + 1) * hidden];
                    let gw = &mut grad[out_off + tok * hidden..out_off + (tok + 1) * hidden];
                    for k in 0..hidden {
                        gw[k] += d * pooled[k];
                        dpooled[k] += d * w[k];
                    }
                }
                if !tail.is_empty() {
                    let scale = 1.0 / tail.len() as f64;
                    for &tok in tail {
                        let ge = &mut grad[tok * hidden..(tok + 1) * hidden];
                        ge.iter_mut()
                            .zip(&dpooled)
                            .for_each(|(g, d)| *g += scale * d);
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulates `scale · ∇θ ln π(y | ctx)` into `grad`.
    pub fn add_log_prob_grad(
        &self,
        ctx: &[usize],
        y: usize,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.vocab.check_id(y)?;
        let probs = softmax(&self.logits(ctx)?);
        let dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| scale * (if i == y { 1.0 } else { 0.0 } - p))
            .collect();
        self.add_logit_grad(ctx, &dlogits, grad)
    }

    /// Exact gradient of `ln π(y | ctx)` with respect to every parameter.
    pub fn log_prob_grad(&self, ctx: &[usize], y: usize) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.values.len()];
        self.add_log_prob_grad(ctx, y, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Samples a continuation of `prompt` until EOS or `max_len` tokens.
    /// The returned sequence holds only the generated tokens.
    pub fn sample_rollout<R: Rng + ?Sized>(
        &self,
        prompt: &[usize],
        temperature: f64,
        max_len: usize,
        rng: &mut R,
    ) -> Result<TokenSeq> {
        if max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be >= 1".into()));
        }
        let eos = self.vocab.eos_id();
        let mut ctx = prompt.to_vec();
        let start = ctx.len();
        while ctx.len() - start < max_len {
            let dist = self.next_token_dist(&ctx, temperature)?;
            let tok = dist.sample(rng);
            ctx.push(tok);
            if tok == eos {
                break;
            }
        }
        TokenSeq::new(ctx.split_off(start), &self.vocab)
    }

    pub fn to_checkpoint_json(&self) -> String {
        crate::json::to_pretty(&CheckpointRepr::from(self)).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let repr: CheckpointRepr = serde_json::from_str(s)?;
        repr.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&s)
    }
}

#[derive(Serialize, Deserialize)]
struct ShapeRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRepr {
    kind: String,
    shape: ShapeRepr,
    vocab: Vocabulary,
    values: Vec<f64>,
}

impl From<&PolicyParams> for CheckpointRepr {
    fn from(p: &PolicyParams) -> Self {
        let shape = match p.kind {
            PolicyKind::TabularNgram { order } => ShapeRepr {
                order: Some(order),
                window: None,
                hidden: None,
            },
            PolicyKind::LinearNeural { window, hidden } => ShapeRepr {
                order: None,
                window: Some(window),
                hidden: Some(hidden),
            },
        };
        CheckpointRepr {
            kind: p.kind.name().to_string(),
            shape,
            vocab: (*p.vocab).clone(),
            values: p.values.clone(),
        }
    }
}

impl TryFrom<CheckpointRepr> for PolicyParams {
    type Error = Error;

    fn try_from(r: CheckpointRepr) -> Result<Self> {
        let missing = |f: &str| Error::InvalidParams(format!("checkpoint shape lacks {f:?}"));
        let kind = match r.kind.as_str() {
            "tabular_ngram" => PolicyKind::TabularNgram {
                order: r.shape.order.ok_or_else(|| missing("order"))?,
            },
            "linear_neural" => PolicyKind::LinearNeural {
                window: r.shape.window.ok_or_else(|| missing("window"))?,
                hidden: r.shape.hidden.ok_or_else(|| missing("hidden"))?,
            },
            other => {
                return Err(Error::InvalidParams(format!(
                    "unknown policy kind {other:?}"
                )))
            }
        };
        PolicyParams::new(kind, Arc::new(r.vocab), r.values)
    }
}
