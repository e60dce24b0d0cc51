//! Synthetic bigram testbeds for the entropy-dynamics and specialization
//! experiments.
//!
//! The vocabulary is `n` lowercase letters plus EOS. The general grammar
//! sends each letter `i` to its common successor `i + 1 (mod n)` with high
//! probability and spreads the rest evenly. The domain grammar mixes each
//! general row with a target row that keeps a (slightly weaker) common
//! successor but lifts a designated set of "characteristic" successors
//! `i + 2, ..., i + 1 + m (mod n)`:
//!
//! ```text
//! domain(· | i) = (1 − s) · general(· | i) + s · target(· | i)
//! ```
//!
//! so `s = 0` makes the two grammars identical. The common successor stays
//! the specialist's argmax, which is what confidence rewards chase, while the
//! characteristic successors carry the positive information gain.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::{self, GrpoConfig, PromptPair, RunLog, Scorers};
use crate::policy::{PolicyKind, PolicyParams, TokenDist};
use crate::reward::{RewardConfig, RewardVariant};
use crate::rng;
use crate::sft::{fit_mle, tree_sum_scalars, FitConfig};
use crate::vocab::{detokenize, Corpus, TokenSeq, TokenizerMode, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phenomenon {
    EntropyCollapse,
    EntropyPreserved,
    PositivePhiOnDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarSpec {
    /// Number of content letters.
    pub content_size: usize,
    pub general_common: f64,
    pub general_eos: f64,
    pub domain_common: f64,
    /// Probability of each characteristic successor in the target row.
    pub domain_special: f64,
    pub special_count: usize,
    pub domain_eos: f64,
    /// Mixing weight `s ∈ [0, 1]` of the target row.
    pub sharpening: f64,
    /// Content tokens before EOS is allowed.
    pub min_len: usize,
    /// Content tokens after which EOS is forced.
    pub max_len: usize,
}

impl Default for GrammarSpec {
    fn default() -> Self {
        GrammarSpec {
            content_size: 12,
            general_common: 0.6,
            general_eos: 0.08,
            domain_common: 0.5,
            domain_special: 0.1,
            special_count: 4,
            domain_eos: 0.06,
            sharpening: 1.0,
            min_len: 4,
            max_len: 24,
        }
    }
}

impl GrammarSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("grammar: {m}")));
        if !(2..=26).contains(&self.content_size) {
            return bad("content_size must lie in [2, 26]");
        }
        if self.special_count + 2 > self.content_size {
            return bad(
                "special_count must leave room for the common successor and one other letter",
            );
        }
        if !(0.0..=1.0).contains(&self.sharpening) {
            return bad("sharpening must lie in [0, 1]");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        let probs = [
            self.general_common,
            self.general_eos,
            self.domain_common,
            self.domain_special,
            self.domain_eos,
        ];
        if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad("row probabilities must lie in (0, 1)");
        }
        if self.general_common + self.general_eos >= 1.0 {
            return bad("general row leaves no mass for other letters");
        }
        let target =
            self.domain_common + self.special_count as f64 * self.domain_special + self.domain_eos;
        if target >= 1.0 {
            return bad("target row leaves no mass for other letters");
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_content((0..self.content_size).map(letter))
            .expect("letters form a valid vocabulary")
    }

    fn general_row(&self, prev: usize) -> Vec<f64> {
        let n = self.content_size;
        let rest = (1.0 - self.general_common - self.general_eos) / (n - 1) as f64;
        let mut row = vec![rest; n + 1];
        row[(prev + 1) % n] = self.general_common;
        row[n] = self.general_eos;
        row
    }

    fn target_row(&self, prev: usize) -> Vec<f64> {
        let n = self.content_size;
        let m = self.special_count;
        let used = self.domain_common + m as f64 * self.domain_special + self.domain_eos;
        let rest = (1.0 - used) / (n - 1 - m) as f64;
        let mut row = vec![rest; n + 1];
        row[(prev + 1) % n] = self.domain_common;
        for j in 0..m {
            row[(prev + 2 + j) % n] = self.domain_special;
        }
        row[n] = self.domain_eos;
        row
    }

    /// Next-token distribution of the chosen grammar after letter `prev`,
    /// or after the start of a sequence when `prev` is `None`.
    pub fn row(&self, domain: bool, prev: Option<usize>) -> Vec<f64> {
        let n = self.content_size;
        let Some(prev) = prev else {
            let mut row = vec![1.0 / n as f64; n + 1];
            row[n] = 0.0;
            return row;
        };
        let general = self.general_row(prev);
        if !domain {
            return general;
        }
        let s = self.sharpening;
        general
            .iter()
            .zip(self.target_row(prev))
            .map(|(g, t)| (1.0 - s) * g + s * t)
            .collect()
    }

    /// Letter ids favoured by the domain grammar after `prev`.
    pub fn characteristic(&self, prev: usize) -> Vec<usize> {
        (0..self.special_count)
            .map(|j| (prev + 2 + j) % self.content_size)
            .collect()
    }

    /// One sequence of letter ids followed by EOS (id `content_size`).
    pub fn sample<R: Rng + ?Sized>(&self, domain: bool, rng: &mut R) -> Vec<usize> {
        let n = self.content_size;
        let mut seq = Vec::new();
        loop {
            if seq.len() == self.max_len {
                seq.push(n);
                return seq;
            }
            let mut row = self.row(domain, seq.last().copied());
            if seq.len() < self.min_len {
                row[n] = 0.0;
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= z);
            }
            let y = TokenDist::new(row)
                .expect("grammar rows are valid distributions")
                .sample(rng);
            seq.push(y);
            if y == n {
                return seq;
            }
        }
    }
}

fn letter(i: usize) -> String {
    char::from(b'a' + i as u8).to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedSpec {
    pub name: String,
    pub phenomenon: Phenomenon,
    #[serde(default)]
    pub grammar: GrammarSpec,
    pub general_sequences: usize,
    /// Split evenly into the specialist's training half and the held-out
    /// half that supplies RL prompts, references and φ evaluation text.
    pub domain_sequences: usize,
    /// Letters of each held-out sequence used as the prompt.
    pub prompt_len: usize,
    #[serde(default)]
    pub fit_general: FitConfig,
    #[serde(default)]
    pub fit_domain: FitConfig,
    #[serde(default)]
    pub grpo: GrpoConfig,
    /// Entropy collapse means final entropy below this fraction of the first
    /// step's entropy.
    pub collapse_threshold: f64,
}

impl Default for TestbedSpec {
    fn default() -> Self {
        TestbedSpec {
            name: "default".into(),
            phenomenon: Phenomenon::EntropyPreserved,
            grammar: GrammarSpec::default(),
            general_sequences: 6000,
            domain_sequences: 6000,
            prompt_len: 2,
            fit_general: FitConfig {
                epochs: 200,
                learning_rate: 5.0,
                ..FitConfig::default()
            },
            fit_domain: FitConfig {
                epochs: 200,
                learning_rate: 5.0,
                ..FitConfig::default()
            },
            grpo: GrpoConfig {
                learning_rate: 1.5,
                ..GrpoConfig::default()
            },
            collapse_threshold: 0.25,
        }
    }
}

impl TestbedSpec {
    pub fn validate(&self) -> Result<()> {
        self.grammar.validate()?;
        if self.general_sequences == 0 || self.domain_sequences < 2 {
            return Err(Error::InvalidConfig(
                "testbed needs general sequences and at least 2 domain sequences".into(),
            ));
        }
        if self.prompt_len > self.grammar.min_len {
            return Err(Error::InvalidConfig(
                "prompt_len must not exceed grammar.min_len".into(),
            ));
        }
        if !(self.collapse_threshold > 0.0 && self.collapse_threshold <= 1.0) {
            return Err(Error::InvalidConfig(
                "collapse_threshold must lie in (0, 1]".into(),
            ));
        }
        self.fit_general.validate()?;
        self.fit_domain.validate()?;
        self.grpo.validate()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: TestbedSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Generated corpora and RL data of one testbed instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Testbed {
    pub vocab: Arc<Vocabulary>,
    pub general: Corpus,
    pub domain_train: Corpus,
    pub domain_heldout: Corpus,
    pub prompts: Vec<PromptPair>,
}

const GENERAL: u64 = 0;
const DOMAIN: u64 = 1;

fn sample_corpus(grammar: &GrammarSpec, seed: u64, which: u64, count: usize) -> Vec<Vec<usize>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, rng::label::CORPUS, &[which, i as u64]);
            grammar.sample(which == DOMAIN, &mut r)
        })
        .collect()
}

pub fn generate_testbed(spec: &TestbedSpec, seed: u64) -> Result<Testbed> {
    spec.validate()?;
    let vocab = Arc::new(spec.grammar.vocabulary());
    let mode = TokenizerMode::Char;
    let general = Corpus::from_sequences(
        sample_corpus(&spec.grammar, seed, GENERAL, spec.general_sequences),
        "general",
        &vocab,
        mode,
    )?;
    let mut domain = sample_corpus(&spec.grammar, seed, DOMAIN, spec.domain_sequences);
    let heldout = domain.split_off(spec.domain_sequences / 2);
    let prompts = heldout
        .iter()
        .map(|seq| {
            Ok(PromptPair {
                prompt: seq[..spec.prompt_len].to_vec(),
                reference: TokenSeq::new(seq[spec.prompt_len..].to_vec(), &vocab)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Testbed {
        general,
        domain_train: Corpus::from_sequences(domain, "domain_train", &vocab, mode)?,
        domain_heldout: Corpus::from_sequences(heldout, "domain_heldout", &vocab, mode)?,
        prompts,
        vocab,
    })
}

impl Testbed {
    /// Corpus text with one sequence per line.
    pub fn corpus_text(&self, corpus: &Corpus) -> String {
        let mut out = String::new();
        for seq in &corpus.sequences {
            out.push_str(&detokenize(seq.ids(), &self.vocab, TokenizerMode::Char));
            out.push('\n');
        }
        out
    }

    /// Prompt pairs as `{"prompt", "reference"}` JSONL.
    pub fn prompts_jsonl(&self) -> String {
        let mut out = String::new();
        for pair in &self.prompts {
            let rec = serde_json::json!({
                "prompt": detokenize(&pair.prompt, &self.vocab, TokenizerMode::Char),
                "reference": detokenize(pair.reference.ids(), &self.vocab, TokenizerMode::Char),
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

/// The generalist fitted from a uniform tabular bigram, and the specialist
/// fitted from the generalist.
#[derive(Debug, Clone)]
pub struct FittedPair {
    pub generalist: PolicyParams,
    pub specialist: PolicyParams,
    pub general_losses: Vec<f64>,
    pub domain_losses: Vec<f64>,
}

pub fn fit_pair(spec: &TestbedSpec, testbed: &Testbed, seed: u64) -> Result<FittedPair> {
    let init = PolicyParams::zeros(PolicyKind::TabularNgram { order: 2 }, testbed.vocab.clone())?;
    let general = fit_mle(
        &init,
        &testbed.general,
        &FitConfig {
            seed,
            ..spec.fit_general
        },
    )?;
    let domain = fit_mle(
        &general.params,
        &testbed.domain_train,
        &FitConfig {
            seed,
            ..spec.fit_domain
        },
    )?;
    Ok(FittedPair {
        generalist: general.params,
        specialist: domain.params,
        general_losses: general.epoch_losses,
        domain_losses: domain.epoch_losses,
    })
}

/// Mean smoothed information gain `ln((p + ε)/(q + ε))` over every token of
/// `corpus`, each sequence scored from an empty context.
pub fn mean_info_gain(
    specialist: &PolicyParams,
    generalist: &PolicyParams,
    corpus: &Corpus,
    epsilon: f64,
) -> Result<f64> {
    let scorers = Scorers::new(specialist, generalist)?;
    let config = RewardConfig {
        epsilon,
        ..RewardConfig::default()
    };
    let parts = corpus
        .sequences
        .par_iter()
        .map(|seq| {
            let trace = scorers.score(&[], seq.ids(), &config)?;
            Ok(trace.records.iter().map(|r| r.phi).sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(tree_sum_scalars(parts) / corpus.num_tokens() as f64)
}

/// Outcome of one GRPO run on a testbed.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub variant: RewardVariant,
    pub config: GrpoConfig,
    pub params: PolicyParams,
    pub log: RunLog,
}

impl VariantRun {
    pub fn initial_entropy(&self) -> f64 {
        self.log
            .records
            .first()
            .map_or(f64::NAN, |r| r.mean_entropy)
    }

    pub fn final_entropy(&self) -> f64 {
        self.log.records.last().map_or(f64::NAN, |r| r.mean_entropy)
    }
}

/// Trains an actor initialised from the specialist with the given reward
/// variant; everything else comes from `grpo`.
pub fn run_variant(
    testbed: &Testbed,
    pair: &FittedPair,
    variant: RewardVariant,
    grpo: &GrpoConfig,
) -> Result<VariantRun> {
    let config = GrpoConfig {
        reward: grpo.reward.with_variant(variant),
        ..*grpo
    };
    let scorers = Scorers::new(&pair.specialist, &pair.generalist)?;
    let out = grpo::train(&pair.specialist, &scorers, &testbed.prompts, &config)?;
    Ok(VariantRun {
        variant,
        config,
        params: out.params,
        log: out.log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub phenomenon: Phenomenon,
    pub pass: bool,
    pub measured: BTreeMap<String, f64>,
}

/// All artifacts of a phenomenon run.
#[derive(Debug, Clone)]
pub struct PhenomenonReport {
    pub testbed: Testbed,
    pub pair: FittedPair,
    /// The requested variant first; for `entropy_preserved` with a non-EndoR
    /// variant, the paired EndoR baseline follows.
    pub runs: Vec<VariantRun>,
    pub verdict: Verdict,
}

/// Generates the testbed for `seed`, fits both policies, runs GRPO with
/// `variant` (and, for `entropy_preserved`, an EndoR baseline on the same
/// seed), and judges the spec's phenomenon. `grpo.seed` is replaced by
/// `seed`.
pub fn run_phenomenon(
    spec: &TestbedSpec,
    variant: RewardVariant,
    grpo: &GrpoConfig,
    seed: u64,
) -> Result<PhenomenonReport> {
    spec.validate()?;
    grpo.validate()?;
    let grpo = GrpoConfig { seed, ..*grpo };
    let testbed = generate_testbed(spec, seed)?;
    let pair = fit_pair(spec, &testbed, seed)?;
    let mut measured = BTreeMap::new();
    let phi = mean_info_gain(
        &pair.specialist,
        &pair.generalist,
        &testbed.domain_heldout,
        grpo.reward.epsilon,
    )?;
    measured.insert("heldout_mean_phi".to_string(), phi);

    let mut runs = Vec::new();
    let pass = match spec.phenomenon {
        Phenomenon::PositivePhiOnDomain => phi > 0.0,
        Phenomenon::EntropyCollapse => {
            let run = run_variant(&testbed, &pair, variant, &grpo)?;
            let ratio = run.final_entropy() / run.initial_entropy();
            measured.insert("initial_entropy".into(), run.initial_entropy());
            measured.insert("final_entropy".into(), run.final_entropy());
            measured.insert("entropy_ratio".into(), ratio);
            runs.push(run);
            ratio < spec.collapse_threshold
        }
        Phenomenon::EntropyPreserved => {
            let run = run_variant(&testbed, &pair, variant, &grpo)?;
            runs.push(run);
            if variant != RewardVariant::Endor {
                runs.push(run_variant(&testbed, &pair, RewardVariant::Endor, &grpo)?);
            }
            let baseline = runs.last().unwrap();
            let ratio = baseline.final_entropy() / baseline.initial_entropy();
            measured.insert("final_entropy".into(), runs[0].final_entropy());
            measured.insert("endor_initial_entropy".into(), baseline.initial_entropy());
            measured.insert("endor_final_entropy".into(), baseline.final_entropy());
            measured.insert("endor_entropy_ratio".into(), ratio);
            runs[0].final_entropy() > baseline.final_entropy()
        }
    };
    Ok(PhenomenonReport {
        testbed,
        pair,
        runs,
        verdict: Verdict {
            phenomenon: spec.phenomenon,
            pass,
            measured,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> TestbedSpec {
        TestbedSpec {
            general_sequences: 60,
            domain_sequences: 40,
            fit_general: FitConfig {
                epochs: 40,
                ..FitConfig::default()
            },
            fit_domain: FitConfig {
                epochs: 40,
                ..FitConfig::default()
            },
            ..TestbedSpec::default()
        }
    }

    #[test]
    fn rows_are_distributions() {
        let g = GrammarSpec {
            sharpening: 0.4,
            ..GrammarSpec::default()
        };
        for prev in (0..g.content_size).map(Some).chain([None]) {
            for domain in [false, true] {
                let row = g.row(domain, prev);
                assert_eq!(row.len(), g.content_size + 1);
                assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
                assert!(row.iter().all(|p| *p >= 0.0));
            }
        }
        let row = g.row(true, Some(11));
        assert_eq!(g.characteristic(11), vec![1, 2, 3, 4]);
        let argmax = (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap();
        assert_eq!(argmax, 0);
    }

    #[test]
    fn zero_sharpening_makes_grammars_identical() {
        let g = GrammarSpec {
            sharpening: 0.0,
            ..GrammarSpec::default()
        };
        for prev in 0..g.content_size {
            assert_eq!(g.row(true, Some(prev)), g.row(false, Some(prev)));
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = small();
        let a = generate_testbed(&spec, 7).unwrap();
        let b = generate_testbed(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_testbed(&spec, 8).unwrap();
        assert_ne!(a.general, c.general);
        assert_eq!(a.domain_train.sequences.len(), 20);
        assert_eq!(a.prompts.len(), 20);
        for (pair, seq) in a.prompts.iter().zip(&a.domain_heldout.sequences) {
            assert_eq!(pair.prompt.len(), spec.prompt_len);
            let mut joined = pair.prompt.clone();
            joined.extend_from_slice(pair.reference.ids());
            assert_eq!(joined, seq.ids());
        }
        let min = spec.grammar.min_len;
        for seq in a.general.sequences.iter().chain(&a.domain_train.sequences) {
            assert!(seq.len() > min && seq.len() <= spec.grammar.max_len + 1);
        }
    }

    #[test]
    fn text_exports_round_trip() {
        let spec = small();
        let t = generate_testbed(&spec, 3).unwrap();
        let text = t.corpus_text(&t.general);
        let back = Corpus::from_text(&text, "general", &t.vocab, TokenizerMode::Char).unwrap();
        assert_eq!(back.sequences, t.general.sequences);
        let pairs =
            grpo::parse_prompt_pairs(&t.prompts_jsonl(), &t.vocab, TokenizerMode::Char).unwrap();
        assert_eq!(pairs, t.prompts);
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let spec = TestbedSpec::default();
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(TestbedSpec::from_json(&text).unwrap(), spec);
        let bad = TestbedSpec {
            prompt_len: 10,
            ..TestbedSpec::default()
        };
        assert!(bad.validate().is_err());
        assert!(TestbedSpec::from_json(r#"{"name": "x"}"#).is_err());
    }
}
