//! Maximum-likelihood fitting of softmax policies on a corpus.
//!
//! Tabular policies train full-batch: token events are collapsed into
//! `(context window, next token) → count` once, which makes each epoch exact
//! and cheap. Neural policies train on shuffled mini-batches of sequences.
//! Gradients of independent chunks are combined by a pairwise tree
//! reduction in a fixed order, so results do not depend on thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyKind, PolicyParams};
use crate::rng;
use crate::vocab::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Sequences per mini-batch (neural policies only).
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 300,
            learning_rate: 5.0,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fitted parameters and the mean per-token negative log-likelihood after
/// each epoch.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: PolicyParams,
    pub epoch_losses: Vec<f64>,
}

fn check_corpus(params: &PolicyParams, corpus: &Corpus) -> Result<()> {
    let vocab = params.vocab();
    for (i, seq) in corpus.sequences.iter().enumerate() {
        if let Some(&bad) = seq.ids().iter().find(|&&id| id >= vocab.size()) {
            return Err(Error::VocabularyMismatch(format!(
                "sequence {i} holds token id {bad} but the policy vocabulary has {} tokens",
                vocab.size()
            )));
        }
        if !seq.ends_with_eos(vocab) {
            return Err(Error::VocabularyMismatch(format!(
                "sequence {i} does not end with the policy's EOS id {}",
                vocab.eos_id()
            )));
        }
    }
    Ok(())
}

/// Sums equal-length vectors pairwise in a fixed tree order.
pub fn tree_sum(mut parts: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; len];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Pairwise sum of scalars in a fixed tree order.
pub fn tree_sum_scalars(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    while xs.len() > 1 {
        xs = xs.chunks(2).map(|c| c.iter().sum()).collect();
    }
    xs[0]
}

type Event = (Vec<usize>, usize);

/// Collapses every (window, next-token) event of `sequences` into counts.
fn count_events<'a, I>(window: usize, sequences: I) -> BTreeMap<Event, f64>
where
    I: IntoIterator<Item = &'a [usize]>,
{
    let mut counts = BTreeMap::new();
    for seq in sequences {
        for t in 0..seq.len() {
            let ctx = seq[t.saturating_sub(window)..t].to_vec();
            *counts.entry((ctx, seq[t])).or_insert(0.0) += 1.0;
        }
    }
    counts
}

const CHUNK: usize = 64;

/// Gradient of `Σ count · ln π(y|ctx)` over `events`.
fn events_grad(params: &PolicyParams, events: &[(&Event, &f64)]) -> Result<Vec<f64>> {
    let n = params.num_params();
    let parts = events
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            for ((ctx, y), &count) in chunk {
                params.add_log_prob_grad(ctx, *y, count, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(tree_sum(parts, n))
}

fn events_log_lik(params: &PolicyParams, events: &[(&Event, &f64)]) -> Result<f64> {
    let parts = events
        .par_chunks(CHUNK)
        .map(|chunk| {
            chunk.iter().try_fold(0.0, |acc, ((ctx, y), &count)| {
                Ok(acc + count * params.log_prob(ctx, *y)?)
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(tree_sum_scalars(parts))
}

/// Mean per-token log-probability of the corpus under `params`; always ≤ 0.
pub fn corpus_log_likelihood(params: &PolicyParams, corpus: &Corpus) -> Result<f64> {
    check_corpus(params, corpus)?;
    let counts = count_events(
        params.kind().window(),
        corpus.sequences.iter().map(|s| s.ids()),
    );
    let events: Vec<_> = counts.iter().collect();
    let total: f64 = counts.values().sum();
    Ok((events_log_lik(params, &events)? / total).min(0.0))
}

fn step(params: &mut PolicyParams, grad: &[f64], scale: f64) {
    params
        .values_mut()
        .iter_mut()
        .zip(grad)
        .for_each(|(v, g)| *v += scale * g);
}

/// Gradient ascent on the mean per-token log-likelihood.
pub fn fit_mle(init: &PolicyParams, corpus: &Corpus, config: &FitConfig) -> Result<FitOutput> {
    config.validate()?;
    check_corpus(init, corpus)?;
    let mut params = init.clone();
    let window = params.kind().window();
    let all_counts = count_events(window, corpus.sequences.iter().map(|s| s.ids()));
    let all_events: Vec<_> = all_counts.iter().collect();
    let total_tokens: f64 = all_counts.values().sum();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        match params.kind() {
            PolicyKind::TabularNgram { .. } => {
                let grad = events_grad(&params, &all_events)?;
                step(&mut params, &grad, config.learning_rate / total_tokens);
            }
            PolicyKind::LinearNeural { .. } => {
                let mut order: Vec<usize> = (0..corpus.sequences.len()).collect();
                order.shuffle(&mut rng::stream(
                    config.seed,
                    rng::label::SHUFFLE,
                    &[epoch as u64],
                ));
                for batch in order.chunks(config.batch_size) {
                    let counts =
                        count_events(window, batch.iter().map(|&i| corpus.sequences[i].ids()));
                    let events: Vec<_> = counts.iter().collect();
                    let n: f64 = counts.values().sum();
                    let grad = events_grad(&params, &events)?;
                    step(&mut params, &grad, config.learning_rate / n);
                }
            }
        }
        let loss = -events_log_lik(&params, &all_events)? / total_tokens;
        epoch_losses.push(loss);
    }
    Ok(FitOutput {
        params,
        epoch_losses,
    })
}

/// Per-epoch loss record for the JSONL training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
}
