use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{Map, Value};

use tcer_core::diagnostics::{
    compare_runs, entropy_trajectory, parse_scored_records, sentence_metrics, QualityLabels,
};
use tcer_core::grpo::{self, load_prompt_pairs, GrpoConfig, RunLog, Scorers};
use tcer_core::json::{to_line, to_pretty};
use tcer_core::policy::{PolicyKind, PolicyParams};
use tcer_core::reward::{sentence_aggregate, RewardConfig, RewardVariant, TokenRewardTrace};
use tcer_core::rng;
use tcer_core::sft::{fit_mle, EpochRecord, FitConfig};
use tcer_core::testbed::{generate_testbed, run_phenomenon, Testbed, TestbedSpec};
use tcer_core::verify::{run_suite, Suite, VerifyOptions};
use tcer_core::vocab::{build_vocabulary, Corpus, TokenizerMode, Vocabulary};
use tcer_core::Error;

use crate::config::{effective, Overrides};
use crate::error::CliError;
use crate::{
    AnalyzeArgs, CompareArgs, FitArgs, GrpoFlags, RewardFlags, RlArgs, ScoreArgs, TestbedArgs,
    VerifyArgs,
};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> String {
    to_pretty(value).expect("value serializes")
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| to_line(x).expect("value serializes") + "\n")
        .collect()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn tokenizer(flag: Option<&str>) -> Result<TokenizerMode, CliError> {
    flag.map_or(Ok(TokenizerMode::Char), |s| {
        s.parse().map_err(CliError::from)
    })
}

/// `nested` addresses the reward block of a GRPO config.
fn reward_overrides(o: &mut Overrides, nested: bool, flags: &RewardFlags) {
    let (variant, k, lambda, epsilon) = if nested {
        (
            "reward.variant",
            "reward.k",
            "reward.lambda",
            "reward.epsilon",
        )
    } else {
        ("variant", "k", "lambda", "epsilon")
    };
    o.set(variant, flags.reward.clone())
        .set_f64(k, flags.k)
        .set_f64(lambda, flags.lambda)
        .set_f64(epsilon, flags.epsilon);
}

fn grpo_overrides(o: &mut Overrides, flags: &GrpoFlags) {
    o.set("steps", flags.steps)
        .set("seed", flags.seed)
        .set_f64("learning_rate", flags.learning_rate)
        .set("group_size", flags.group_size)
        .set_f64("clip_eps", flags.clip_eps)
        .set_f64("kl_beta", flags.kl_beta)
        .set_f64("temperature", flags.temperature)
        .set("max_len", flags.max_len)
        .set("prompts_per_step", flags.prompts_per_step)
        .set_f64("momentum", flags.momentum)
        .set("train_on_reference", flags.train_on_reference);
}

fn policy_kind(args: &FitArgs) -> Result<PolicyKind, CliError> {
    match args.kind.as_deref().unwrap_or("tabular") {
        "tabular" => {
            if args.window.is_some() || args.hidden.is_some() {
                return Err(CliError::usage(
                    "--window/--hidden apply to neural policies",
                ));
            }
            Ok(PolicyKind::TabularNgram {
                order: args.order.unwrap_or(2),
            })
        }
        "neural" => {
            if args.order.is_some() {
                return Err(CliError::usage("--order applies to tabular policies"));
            }
            Ok(PolicyKind::LinearNeural {
                window: args.window.unwrap_or(4),
                hidden: args.hidden.unwrap_or(16),
            })
        }
        other => Err(CliError::usage(format!(
            "unknown policy kind {other:?} (expected tabular or neural)"
        ))),
    }
}

pub fn fit(args: FitArgs) -> Result<(), CliError> {
    let mode = tokenizer(args.tokenizer.as_deref())?;
    let mut o = Overrides::default();
    o.set("epochs", args.epochs)
        .set_f64("learning_rate", args.learning_rate)
        .set("batch_size", args.batch_size)
        .set("seed", args.seed);
    let config: FitConfig = effective(args.config.as_deref(), o)?;
    config.validate()?;

    let init = match &args.init {
        Some(path) => {
            if args.kind.is_some()
                || args.order.is_some()
                || args.window.is_some()
                || args.hidden.is_some()
                || args.vocab.is_some()
            {
                return Err(CliError::usage(
                    "--kind/--order/--window/--hidden/--vocab conflict with --init",
                ));
            }
            PolicyParams::load(path)?
        }
        None => {
            let kind = policy_kind(&args)?;
            let vocab = match &args.vocab {
                Some(path) => Vocabulary::from_json(&read(path)?)?,
                None => build_vocabulary(&[&args.corpus], mode)?,
            };
            let vocab = Arc::new(vocab);
            match kind {
                PolicyKind::TabularNgram { .. } => PolicyParams::zeros(kind, vocab)?,
                PolicyKind::LinearNeural { .. } => {
                    let mut r = rng::stream(config.seed, rng::label::INIT, &[]);
                    PolicyParams::random(kind, vocab, 0.1, &mut r)?
                }
            }
        }
    };
    let corpus = Corpus::load(&args.corpus, init.vocab(), mode)?;
    let out = fit_mle(&init, &corpus, &config)?;
    out.params.save(&args.out)?;
    write(&with_suffix(&args.out, ".config.json"), pretty(&config))?;
    let log: Vec<EpochRecord> = out
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| EpochRecord { epoch, loss })
        .collect();
    write(&with_suffix(&args.out, ".log.jsonl"), jsonl(&log))
}

pub fn rl(args: RlArgs) -> Result<(), CliError> {
    let mode = tokenizer(args.tokenizer.as_deref())?;
    let mut o = Overrides::default();
    grpo_overrides(&mut o, &args.grpo);
    reward_overrides(&mut o, true, &args.reward);
    let config: GrpoConfig = effective(args.config.as_deref(), o)?;
    config.validate()?;

    let actor = PolicyParams::load(&args.actor)?;
    let pi_s = PolicyParams::load(&args.pi_s)?;
    let pi_b = PolicyParams::load(&args.pi_b)?;
    let scorers = Scorers::new(&pi_s, &pi_b)?;
    let pairs = load_prompt_pairs(&args.prompts, actor.vocab(), mode)?;
    let out = grpo::train(&actor, &scorers, &pairs, &config)?;

    create_dir(&args.out)?;
    write(&args.out.join("config.json"), pretty(&config))?;
    out.params.save(args.out.join("final.json"))?;
    out.log.save(args.out.join("runlog.jsonl"))?;
    Ok(())
}

fn field<T: serde::de::DeserializeOwned>(
    rec: &Map<String, Value>,
    key: &str,
    line: usize,
) -> Result<Option<T>, CliError> {
    match rec.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone()).map(Some).map_err(|e| {
            CliError::from(Error::Malformed {
                line,
                message: format!("field {key:?}: {e}"),
            })
        }),
    }
}

fn floats(xs: impl IntoIterator<Item = f64>) -> Value {
    Value::Array(
        xs.into_iter()
            .map(|x| serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number))
            .collect(),
    )
}

fn float(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn score_record(
    rec: &mut Map<String, Value>,
    line: usize,
    scorers: Option<&Scorers<'_>>,
    config: &RewardConfig,
) -> Result<(), CliError> {
    let malformed = |message: String| CliError::from(Error::Malformed { line, message });
    let tokens: Vec<usize> =
        field(rec, "tokens", line)?.ok_or_else(|| malformed("missing \"tokens\"".into()))?;
    let p: Option<Vec<f64>> = field(rec, "p", line)?;
    let q: Option<Vec<f64>> = field(rec, "q", line)?;
    let trace = match (p, q, scorers) {
        (Some(p), Some(q), _) => TokenRewardTrace::from_probs(&tokens, &p, &q, config),
        (None, None, Some(s)) => {
            let prompt: Vec<usize> = field(rec, "prompt", line)?.unwrap_or_default();
            s.score(&prompt, &tokens, config)
        }
        (None, None, None) => {
            return Err(malformed(
                "record has no \"p\"/\"q\" arrays and no --pi-s/--pi-b were given".into(),
            ))
        }
        _ => return Err(malformed("\"p\" and \"q\" must be given together".into())),
    }
    .map_err(|e| malformed(e.to_string()))?;
    if trace.is_empty() {
        return Err(malformed("empty token sequence".into()));
    }
    let sentences: Option<Vec<(usize, usize)>> = field(rec, "sentences", line)?;
    let col = |f: fn(&tcer_core::reward::TokenRecord) -> f64| floats(trace.records.iter().map(f));
    if !rec.contains_key("p") {
        rec.insert("p".into(), col(|r| r.p));
        rec.insert("q".into(), col(|r| r.q));
    }
    rec.insert("endor".into(), col(|r| r.endor));
    rec.insert("phi".into(), col(|r| r.phi));
    rec.insert("gate".into(), col(|r| r.gate));
    rec.insert("tcer".into(), col(|r| r.tcer));
    let mean = |v| trace.mean_reward(v).map_err(|e| malformed(e.to_string()));
    rec.insert("seq_endor".into(), float(mean(RewardVariant::Endor)?));
    rec.insert("seq_tcer".into(), float(mean(RewardVariant::Tcer)?));
    if let Some(ranges) = sentences {
        let scores = sentence_aggregate(&trace, &ranges).map_err(|e| malformed(e.to_string()))?;
        rec.insert(
            "sentence_endor".into(),
            floats(scores.iter().map(|s| s.endor)),
        );
        rec.insert(
            "sentence_tcer".into(),
            floats(scores.iter().map(|s| s.tcer)),
        );
    }
    Ok(())
}

pub fn score(args: ScoreArgs) -> Result<(), CliError> {
    let mut o = Overrides::default();
    reward_overrides(&mut o, false, &args.reward);
    let config: RewardConfig = effective(args.config.as_deref(), o)?;
    config.validate()?;
    let policies = match (&args.pi_s, &args.pi_b) {
        (Some(s), Some(b)) => Some((PolicyParams::load(s)?, PolicyParams::load(b)?)),
        (None, None) => None,
        _ => return Err(CliError::usage("--pi-s and --pi-b must be given together")),
    };
    let scorers = match &policies {
        Some((s, b)) => Some(Scorers::new(s, b)?),
        None => None,
    };
    let text = read(&args.input)?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: Map<String, Value> = serde_json::from_str(line).map_err(|e| {
            CliError::from(Error::Malformed {
                line: i + 1,
                message: e.to_string(),
            })
        })?;
        score_record(&mut rec, i + 1, scorers.as_ref(), &config)?;
        out.push_str(&to_line(&rec).expect("record serializes"));
        out.push('\n');
    }
    write(&args.out, out)
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let mut report = Map::new();
    match (&args.scores, &args.labels) {
        (Some(scores), Some(labels)) => {
            let scored = parse_scored_records(&read(scores)?)?;
            let labels = QualityLabels::from_json(&read(labels)?)?;
            let metrics = sentence_metrics(&scored, &labels)?;
            report.insert(
                "validation".into(),
                serde_json::to_value(metrics).expect("report"),
            );
        }
        (None, None) => {}
        _ => {
            return Err(CliError::usage(
                "--scores and --labels must be given together",
            ))
        }
    }
    if let Some(log) = &args.log {
        let trajectory = entropy_trajectory(&RunLog::load(log)?)?;
        report.insert(
            "entropy_trajectory".into(),
            serde_json::to_value(trajectory).expect("trajectory"),
        );
    }
    if report.is_empty() {
        return Err(CliError::usage(
            "nothing to analyze: give --scores/--labels or --log",
        ));
    }
    write(&args.out, pretty(&report))
}

pub fn compare(args: CompareArgs) -> Result<(), CliError> {
    let a = RunLog::load(&args.a)?;
    let b = RunLog::load(&args.b)?;
    let cmp = compare_runs(&a, &b)?;
    write(&args.out, cmp.to_csv())?;
    if let Some(path) = &args.summary {
        let summary = serde_json::json!({
            "b_final_entropy_gt_a": cmp.b_final_entropy_gt_a,
            "b_final_reward_gt_a": cmp.b_final_reward_gt_a,
            "b_mean_entropy_gt_a": cmp.b_mean_entropy_gt_a,
            "final_entropy_delta": cmp.final_entropy_delta,
            "final_reward_delta": cmp.final_reward_delta,
        });
        write(path, pretty(&summary))?;
    }
    Ok(())
}

fn write_testbed_data(dir: &Path, testbed: &Testbed) -> Result<(), CliError> {
    create_dir(dir)?;
    write(&dir.join("vocab.json"), testbed.vocab.to_json())?;
    write(
        &dir.join("general.txt"),
        testbed.corpus_text(&testbed.general),
    )?;
    write(
        &dir.join("domain_train.txt"),
        testbed.corpus_text(&testbed.domain_train),
    )?;
    write(
        &dir.join("domain_heldout.txt"),
        testbed.corpus_text(&testbed.domain_heldout),
    )?;
    write(&dir.join("prompts.jsonl"), testbed.prompts_jsonl())
}

pub fn testbed(args: TestbedArgs) -> Result<(), CliError> {
    let variant: RewardVariant = args.variant.parse()?;
    let mut spec = TestbedSpec::load(&args.spec)?;
    if let Some(s) = args.steps {
        spec.grpo.steps = s;
    }
    if let Some(lr) = args.learning_rate {
        spec.grpo.learning_rate = lr;
    }
    if let Some(k) = args.k {
        spec.grpo.reward.k = k;
    }
    if let Some(l) = args.lambda {
        spec.grpo.reward.lambda = l;
    }
    spec.validate()?;
    let root = args.out.join(&spec.name);
    create_dir(&root)?;
    write(&root.join("spec.json"), pretty(&spec))?;

    if args.generate_only {
        let testbed = generate_testbed(&spec, args.seed)?;
        return write_testbed_data(&root.join("data"), &testbed);
    }

    let report = run_phenomenon(&spec, variant, &spec.grpo, args.seed)?;
    write_testbed_data(&root.join("data"), &report.testbed)?;
    report.pair.generalist.save(root.join("pi_b.json"))?;
    report.pair.specialist.save(root.join("pi_s.json"))?;
    for run in &report.runs {
        let dir = root.join(run.variant.to_string());
        create_dir(&dir)?;
        write(&dir.join("config.json"), pretty(&run.config))?;
        run.params.save(dir.join("final.json"))?;
        run.log.save(dir.join("runlog.jsonl"))?;
    }
    if let [treated, baseline] = report.runs.as_slice() {
        let cmp = compare_runs(&baseline.log, &treated.log)?;
        write(&root.join("comparison.csv"), cmp.to_csv())?;
    }
    let verdict = pretty(&report.verdict);
    write(&root.join("verdict.json"), &verdict)?;
    print!("{verdict}");
    Ok(())
}

pub fn verify(args: VerifyArgs) -> Result<(), CliError> {
    let suite: Suite = args.suite.parse()?;
    let opts = VerifyOptions {
        samples: args.samples,
        seed: args.seed,
        epsilon_override: args.debug_epsilon,
    };
    let report = run_suite(suite, &opts)?;
    let text = pretty(&report);
    match &args.out {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    if report.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .properties
            .iter()
            .filter(|p| !p.holds())
            .map(|p| p.name.as_str())
            .collect();
        Err(CliError::data(format!(
            "properties violated: {}",
            failed.join(", ")
        )))
    }
}
