//! Run-log analysis and sentence-level reward metrics against externally
//! supplied quality labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::grpo::RunLog;
use crate::json::fmt_f64;

fn id_string<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => Ok(s),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "id must be a string or number, got {other}"
        ))),
    }
}

/// High-quality sentence ranges of one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    #[serde(deserialize_with = "id_string")]
    pub id: String,
    pub high_quality: Vec<(usize, usize)>,
}

/// Labels file: `{"texts": [{"id": ..., "high_quality": [[start, end], ...]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityLabels {
    pub texts: Vec<LabeledText>,
}

impl QualityLabels {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Sentence ranges of one scored text with the mean reward of each sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredText {
    pub id: String,
    pub sentences: Vec<(usize, usize)>,
    pub endor: Vec<f64>,
    pub tcer: Vec<f64>,
}

#[derive(Deserialize)]
struct ScoredLine {
    #[serde(default)]
    id: Option<serde_json::Value>,
    #[serde(default)]
    sentences: Vec<(usize, usize)>,
    #[serde(default)]
    sentence_endor: Option<Vec<f64>>,
    #[serde(default)]
    sentence_tcer: Option<Vec<f64>>,
    #[serde(default)]
    endor: Option<Vec<f64>>,
    #[serde(default)]
    tcer: Option<Vec<f64>>,
}

fn sentence_means(tokens: &[f64], ranges: &[(usize, usize)]) -> Result<Vec<f64>> {
    crate::reward::validate_ranges(ranges, tokens.len())?;
    Ok(ranges
        .iter()
        .map(|&(s, e)| tokens[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect())
}

/// Parses scored JSONL records. A record's id is its `"id"` field when
/// present, otherwise its 0-based record index. Sentence means are taken
/// from `sentence_endor`/`sentence_tcer`, or recomputed from the token
/// `endor`/`tcer` arrays.
pub fn parse_scored_records(text: &str) -> Result<Vec<ScoredText>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            line: i + 1,
            message,
        };
        let rec: ScoredLine = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let id = match rec.id {
            None => out.len().to_string(),
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(other) => return Err(malformed(format!("bad id {other}"))),
        };
        let column =
            |sent: Option<Vec<f64>>, tok: Option<Vec<f64>>, name: &str| -> Result<Vec<f64>> {
                match (sent, tok) {
                    (Some(s), _) if s.len() == rec.sentences.len() => Ok(s),
                    (Some(s), _) => Err(malformed(format!(
                        "sentence_{name} has {} entries for {} sentences",
                        s.len(),
                        rec.sentences.len()
                    ))),
                    (None, Some(t)) => {
                        sentence_means(&t, &rec.sentences).map_err(|e| malformed(e.to_string()))
                    }
                    (None, None) if rec.sentences.is_empty() => Ok(Vec::new()),
                    (None, None) => Err(malformed(format!("no {name} scores"))),
                }
            };
        let endor = column(rec.sentence_endor, rec.endor, "endor")?;
        let tcer = column(rec.sentence_tcer, rec.tcer, "tcer")?;
        out.push(ScoredText {
            id,
            sentences: rec.sentences,
            endor,
            tcer,
        });
    }
    Ok(out)
}

/// The three sentence-level metrics for one reward variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub high_quality_avg: f64,
    /// `None` when every sentence is labeled high-quality.
    pub regular_avg: Option<f64>,
    pub recall_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub endor: VariantMetrics,
    pub tcer: VariantMetrics,
    pub texts: usize,
    /// Number of high-quality sentences per labeled text, in id order.
    pub high_quality_counts: Vec<usize>,
}

/// Indices of the `k` highest rewards; ties go to the earlier sentence.
pub fn top_k(rewards: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rewards.len()).collect();
    idx.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

struct Accum {
    hq: Vec<f64>,
    regular: Vec<f64>,
    recalls: Vec<f64>,
}

impl Accum {
    fn new() -> Self {
        Accum {
            hq: Vec::new(),
            regular: Vec::new(),
            recalls: Vec::new(),
        }
    }

    fn add(&mut self, rewards: &[f64], labeled: &BTreeSet<usize>) {
        for (i, &r) in rewards.iter().enumerate() {
            if labeled.contains(&i) {
                self.hq.push(r);
            } else {
                self.regular.push(r);
            }
        }
        let top = top_k(rewards, labeled.len());
        let hits = top.iter().filter(|i| labeled.contains(i)).count();
        self.recalls.push(hits as f64 / labeled.len() as f64);
    }

    fn finish(self) -> VariantMetrics {
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        VariantMetrics {
            high_quality_avg: mean(&self.hq),
            regular_avg: (!self.regular.is_empty()).then(|| mean(&self.regular)),
            recall_at_k: mean(&self.recalls),
        }
    }
}

/// High-quality average, regular average and recall@k per variant, where
/// `k` is each text's number of labeled sentences. Texts are processed in
/// id order so the result does not depend on input order.
pub fn sentence_metrics(scored: &[ScoredText], labels: &QualityLabels) -> Result<ValidationReport> {
    let mut by_id: BTreeMap<&str, &ScoredText> = BTreeMap::new();
    for rec in scored {
        if by_id.insert(rec.id.as_str(), rec).is_some() {
            return Err(Error::MisalignedLabels(format!(
                "duplicate scored id {:?}",
                rec.id
            )));
        }
    }
    let mut labeled: BTreeMap<&str, &LabeledText> = BTreeMap::new();
    for text in &labels.texts {
        if labeled.insert(text.id.as_str(), text).is_some() {
            return Err(Error::MisalignedLabels(format!(
                "duplicate label id {:?}",
                text.id
            )));
        }
    }
    if labeled.is_empty() {
        return Err(Error::MisalignedLabels("no labeled texts".into()));
    }

    let mut endor = Accum::new();
    let mut tcer = Accum::new();
    let mut counts = Vec::with_capacity(labeled.len());
    for (id, text) in labeled {
        let rec = by_id
            .get(id)
            .ok_or_else(|| Error::MisalignedLabels(format!("no scored record with id {id:?}")))?;
        let mut set = BTreeSet::new();
        for range in &text.high_quality {
            let idx = rec
                .sentences
                .iter()
                .position(|s| s == range)
                .ok_or_else(|| {
                    Error::MisalignedLabels(format!(
                        "text {id:?}: range [{}, {}) is not one of its sentences",
                        range.0, range.1
                    ))
                })?;
            if !set.insert(idx) {
                return Err(Error::MisalignedLabels(format!(
                    "text {id:?}: sentence {idx} labeled twice"
                )));
            }
        }
        if set.is_empty() {
            return Err(Error::MisalignedLabels(format!(
                "text {id:?} has no high-quality sentences"
            )));
        }
        counts.push(set.len());
        endor.add(&rec.endor, &set);
        tcer.add(&rec.tcer, &set);
    }
    Ok(ValidationReport {
        endor: endor.finish(),
        tcer: tcer.finish(),
        texts: counts.len(),
        high_quality_counts: counts,
    })
}

/// Entropy series with simple decay statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyTrajectory {
    pub series: Vec<(usize, f64)>,
    pub initial: f64,
    #[serde(rename = "final")]
    pub last: f64,
    /// First step whose entropy is below half the initial value.
    pub half_decay_step: Option<usize>,
}

pub fn entropy_trajectory(log: &RunLog) -> Result<EntropyTrajectory> {
    let first = log.records.first().ok_or(Error::EmptyInput)?;
    let series: Vec<(usize, f64)> = log
        .records
        .iter()
        .map(|r| (r.step, r.mean_entropy))
        .collect();
    let initial = first.mean_entropy;
    let half_decay_step = series
        .iter()
        .find(|(_, h)| *h < 0.5 * initial)
        .map(|(s, _)| *s);
    Ok(EntropyTrajectory {
        last: series.last().unwrap().1,
        initial,
        series,
        half_decay_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub step: usize,
    pub entropy_a: f64,
    pub entropy_b: f64,
    pub reward_a: f64,
    pub reward_b: f64,
    pub entropy_delta: f64,
    pub reward_delta: f64,
}

/// Step-aligned comparison of two runs (`delta = b − a`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub rows: Vec<ComparisonRow>,
    pub b_final_entropy_gt_a: bool,
    pub b_final_reward_gt_a: bool,
    pub b_mean_entropy_gt_a: bool,
    pub final_entropy_delta: f64,
    pub final_reward_delta: f64,
}

impl RunComparison {
    /// CSV with header `step,entropy_a,entropy_b,reward_a,reward_b`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,entropy_a,entropy_b,reward_a,reward_b\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step,
                fmt_f64(r.entropy_a),
                fmt_f64(r.entropy_b),
                fmt_f64(r.reward_a),
                fmt_f64(r.reward_b)
            ));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.entropy_delta == 0.0 && r.reward_delta == 0.0)
    }
}

pub fn compare_runs(a: &RunLog, b: &RunLog) -> Result<RunComparison> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "runs have {} and {} steps",
            a.len(),
            b.len()
        )));
    }
    let rows: Vec<ComparisonRow> = a
        .records
        .iter()
        .zip(&b.records)
        .map(|(x, y)| ComparisonRow {
            step: x.step,
            entropy_a: x.mean_entropy,
            entropy_b: y.mean_entropy,
            reward_a: x.mean_reward,
            reward_b: y.mean_reward,
            entropy_delta: y.mean_entropy - x.mean_entropy,
            reward_delta: y.mean_reward - x.mean_reward,
        })
        .collect();
    let (fe, fr) = rows
        .last()
        .map(|r| (r.entropy_delta, r.reward_delta))
        .unwrap_or((0.0, 0.0));
    let mean_delta = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.entropy_delta).sum::<f64>() / rows.len() as f64
    };
    Ok(RunComparison {
        b_final_entropy_gt_a: fe > 0.0,
        b_final_reward_gt_a: fr > 0.0,
        b_mean_entropy_gt_a: mean_delta > 0.0,
        final_entropy_delta: fe,
        final_reward_delta: fr,
        rows,
    })
}
