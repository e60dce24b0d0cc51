//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Exits non-zero when a criterion fails that is not in `KNOWN_RED`, or when a
//! known-red criterion starts passing (the list must then be updated).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use tcer_core::diagnostics::{parse_scored_records, sentence_metrics, QualityLabels};
use tcer_core::grpo::group_advantage;
use tcer_core::reward::{
    diversity_gap_bound, diversity_gap_check, RewardConfig, RewardVariant, TokenRewardTrace,
};
use tcer_core::testbed::{run_phenomenon, TestbedSpec};
use tcer_core::verify::{
    check_correction_derivative, check_coverage_lower_bound, check_coverage_range,
    check_decomposition, check_grpo_gradient, check_linearity, check_one_step_optimum, run_suite,
    PropertyReport, Suite, VerifyOptions,
};

/// Criteria that fail on their own fixture; the reason is printed with the line.
const KNOWN_RED: &[u32] = &[4];

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn summarize(reports: &[PropertyReport]) -> (bool, String) {
    let pass = reports.iter().all(|r| r.holds());
    let detail = reports
        .iter()
        .map(|r| format!("{} {}/{}", r.name, r.passed, r.checked))
        .collect::<Vec<_>>()
        .join(", ");
    (pass, detail)
}

fn tcer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tcer"))
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let out = cmd.output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{:?} exited {:?}: {}",
            cmd.get_args().collect::<Vec<_>>(),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn default_spec_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../testbeds/default.json")
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let report = run_suite(Suite::Bounds, &VerifyOptions::new(1_000_000, 0)).expect("suite runs");
    let elapsed = start.elapsed();
    let (ok, detail) = summarize(&report.properties);
    let fast = elapsed < Duration::from_secs(30);
    outcome(
        ok && fast,
        format!("{detail}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let reports = [
        check_one_step_optimum(&VerifyOptions::new(1000, 0)),
        check_linearity(&VerifyOptions::new(10_000, 0)),
    ];
    let elapsed = start.elapsed();
    let (ok, detail) = summarize(&reports);
    let fast = elapsed < Duration::from_secs(120);
    outcome(
        ok && fast,
        format!("{detail}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let opts = VerifyOptions::new(10_000, 0);
    let (ok, detail) = summarize(&[
        check_coverage_range(&opts),
        check_coverage_lower_bound(&opts),
    ]);
    outcome(ok, detail)
}

fn criterion_4() -> Outcome {
    let (fd_ok, fd_detail) =
        summarize(&[check_correction_derivative(&VerifyOptions::new(10_000, 0))]);
    let config = RewardConfig::default();
    let trace = |p: &[f64]| {
        let q: Vec<f64> = p.iter().map(|x| x / 2.0).collect();
        let tokens: Vec<usize> = (0..p.len()).collect();
        TokenRewardTrace::from_probs(&tokens, p, &q, &config).expect("valid fixture")
    };
    let det = trace(&[0.99; 4]);
    let diverse = trace(&[0.5, 0.9, 0.5, 0.9]);
    let gap = diversity_gap_check(&det, &diverse, &config).expect("non-empty traces");
    let bound = diversity_gap_bound(&diverse, &config).expect("non-empty trace");
    let gap_ok = gap.gap > 0.0 && gap.gap >= bound;
    outcome(
        fd_ok && gap_ok,
        format!(
            "{fd_detail}; gap {:.7} vs bound {:.7} (r_det {:.7}, r_diverse {:.7}): the ln p term \
             of the diverse trace outweighs the correction at these settings",
            gap.gap, bound, gap.r_det, gap.r_diverse
        ),
    )
}

fn criterion_5() -> Outcome {
    let (ok, detail) = summarize(&[check_decomposition(&VerifyOptions::new(1_000_000, 0))]);
    outcome(ok, detail)
}

fn criterion_6() -> Outcome {
    let (fd_ok, detail) = summarize(&[check_grpo_gradient(&VerifyOptions::new(20, 0))]);
    let a = group_advantage(&[0.3, -1.2, 2.5, 0.7, 0.7]).expect("group");
    let mean_ok = (a.iter().sum::<f64>() / a.len() as f64).abs() <= 1e-9;
    let equal_ok = group_advantage(&[1.5; 6])
        .expect("group")
        .iter()
        .all(|&x| x == 0.0);
    let fixed = group_advantage(&[2.0, 0.0, 1.0, 1.0]).expect("group");
    let expect = [2f64.sqrt(), -(2f64.sqrt()), 0.0, 0.0];
    let fixed_ok = fixed
        .iter()
        .zip(expect)
        .all(|(x, e)| (x - e).abs() <= 1e-12);
    outcome(
        fd_ok && mean_ok && equal_ok && fixed_ok,
        format!("{detail}; advantages {fixed:?}"),
    )
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    run: PathBuf,
}

/// Generates the default testbed and its fitted pair once through the CLI.
fn workspace() -> Workspace {
    let dir = tempfile::tempdir().expect("tempdir");
    let root = dir.path().to_path_buf();
    run_ok(
        tcer()
            .arg("testbed")
            .arg("--spec")
            .arg(default_spec_path())
            .arg("--out")
            .arg(root.join("tb"))
            .args(["--steps", "20"]),
    )
    .expect("testbed runs");
    let run = root.join("tb/default");
    Workspace {
        _dir: dir,
        root,
        run,
    }
}

fn rl(ws: &Workspace, out: &Path, extra: &[&str]) -> Result<(), String> {
    run_ok(
        tcer()
            .arg("rl")
            .arg("--actor")
            .arg(ws.run.join("pi_s.json"))
            .arg("--pi-s")
            .arg(ws.run.join("pi_s.json"))
            .arg("--pi-b")
            .arg(ws.run.join("pi_b.json"))
            .arg("--prompts")
            .arg(ws.run.join("data/prompts.jsonl"))
            .arg("--out")
            .arg(out)
            .args(extra),
    )
}

fn criterion_7(ws: &Workspace) -> Outcome {
    let a = ws.root.join("k0");
    let b = ws.root.join("endor");
    let common = [
        "--steps",
        "400",
        "--seed",
        "11",
        "--max-len",
        "16",
        "--temperature",
        "0.7",
    ];
    let mut with_tcer = vec!["--reward", "tcer", "--k", "0"];
    with_tcer.extend(common);
    let mut with_endor = vec!["--reward", "endor"];
    with_endor.extend(common);
    if let Err(e) = rl(ws, &a, &with_tcer).and_then(|_| rl(ws, &b, &with_endor)) {
        return outcome(false, e);
    }
    let same = |f: &str| fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok();
    let records = fs::read_to_string(a.join("runlog.jsonl")).map_or(0, |s| s.lines().count());
    let ok = same("runlog.jsonl") && same("final.json") && records == 400;
    outcome(
        ok,
        format!("{records} records; runlog and final checkpoint byte-identical: {ok}"),
    )
}

fn criteria_8_and_9() -> (Outcome, Outcome) {
    let spec = TestbedSpec::load(default_spec_path()).expect("default spec");
    let mut collapse_wins = 0;
    let mut phi_positive = 0;
    let mut lines8 = Vec::new();
    let mut lines9 = Vec::new();
    for seed in SEEDS {
        let report = run_phenomenon(&spec, RewardVariant::Tcer, &spec.grpo, seed).expect("run");
        let m = &report.verdict.measured;
        let ratio = m["endor_entropy_ratio"];
        let tcer_final = m["final_entropy"];
        let endor_final = m["endor_final_entropy"];
        let phi = m["heldout_mean_phi"];
        if ratio < 0.25 && tcer_final > endor_final {
            collapse_wins += 1;
        }
        if phi > 0.0 {
            phi_positive += 1;
        }
        lines8.push(format!(
            "seed {seed}: endor ratio {ratio:.3}, tcer {tcer_final:.3} vs endor {endor_final:.3}"
        ));
        lines9.push(format!("seed {seed}: phi {phi:.4}"));
    }
    let vocab = spec.grammar.content_size + 1;
    let within_scale = vocab <= 40 && spec.grpo.steps <= 400;
    (
        outcome(
            collapse_wins >= 4 && within_scale,
            format!("{collapse_wins}/5 seeds; {}", lines8.join("; ")),
        ),
        outcome(
            phi_positive == SEEDS.len(),
            format!("{phi_positive}/5 seeds; {}", lines9.join("; ")),
        ),
    )
}

/// Five texts with dyadic sentence rewards, including ties, so every mean
/// is exact in any summation order.
const SCORES_FIXTURE: &str = r#"{"id": "t1", "sentences": [[0,3],[3,5],[5,9]], "sentence_endor": [-0.5, -1.25, -0.25], "sentence_tcer": [0.75, -0.5, 0.125]}
{"id": "t2", "sentences": [[0,2],[2,4],[4,6],[6,8]], "sentence_endor": [-2.0, -0.5, -0.5, -1.0], "sentence_tcer": [0.25, 0.25, -0.125, 1.5]}
{"id": "t3", "sentences": [[0,4],[4,7]], "sentence_endor": [-0.375, -0.625], "sentence_tcer": [-0.375, 0.5]}
{"id": "t4", "sentences": [[0,1],[1,2],[2,3],[3,4],[4,5]], "sentence_endor": [-1.0, -1.0, -1.0, -0.75, -3.0], "sentence_tcer": [0.0, 0.5, -0.25, 0.5, 0.0625]}
{"id": "t5", "sentences": [[0,6],[6,10],[10,12]], "sentence_endor": [-0.125, -0.875, -1.5], "sentence_tcer": [1.0, 2.0, -1.0]}
"#;

const LABELS_FIXTURE: &str = r#"{"texts": [
  {"id": "t1", "high_quality": [[5,9]]},
  {"id": "t2", "high_quality": [[2,4],[6,8]]},
  {"id": "t3", "high_quality": [[4,7]]},
  {"id": "t4", "high_quality": [[1,2],[2,3]]},
  {"id": "t5", "high_quality": [[0,6],[6,10],[10,12]]}
]}"#;

struct OracleMetrics {
    hq: f64,
    regular: Option<f64>,
    recall: f64,
}

/// Ranks every sentence by counting the sentences ahead of it: strictly
/// higher rewards, or equal rewards at earlier positions.
fn rank_oracle(texts: &[(Vec<f64>, BTreeSet<usize>)]) -> OracleMetrics {
    let (mut hq, mut hq_n, mut reg, mut reg_n, mut recall) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (rewards, labeled) in texts {
        let k = labeled.len();
        let mut hits = 0;
        for (i, &r) in rewards.iter().enumerate() {
            let ahead = rewards
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > r || (s == r && j < i))
                .count();
            if labeled.contains(&i) {
                hq += r;
                hq_n += 1.0;
                if ahead < k {
                    hits += 1;
                }
            } else {
                reg += r;
                reg_n += 1.0;
            }
        }
        recall += hits as f64 / k as f64;
    }
    OracleMetrics {
        hq: hq / hq_n,
        regular: (reg_n > 0.0).then(|| reg / reg_n),
        recall: recall / texts.len() as f64,
    }
}

fn criterion_10() -> Outcome {
    let scored = parse_scored_records(SCORES_FIXTURE).expect("fixture parses");
    let labels = QualityLabels::from_json(LABELS_FIXTURE).expect("labels parse");
    let report = sentence_metrics(&scored, &labels).expect("aligned fixture");
    let oracle_input = |tcer: bool| -> Vec<(Vec<f64>, BTreeSet<usize>)> {
        scored
            .iter()
            .zip(&labels.texts)
            .map(|(s, l)| {
                let set = l
                    .high_quality
                    .iter()
                    .map(|r| {
                        s.sentences
                            .iter()
                            .position(|x| x == r)
                            .expect("label range")
                    })
                    .collect();
                (
                    if tcer {
                        s.tcer.clone()
                    } else {
                        s.endor.clone()
                    },
                    set,
                )
            })
            .collect()
    };
    let mut ok = true;
    for (tcer, got) in [(false, report.endor), (true, report.tcer)] {
        let want = rank_oracle(&oracle_input(tcer));
        ok &= got.high_quality_avg == want.hq
            && got.regular_avg == want.regular
            && got.recall_at_k == want.recall;
    }
    outcome(
        ok,
        format!(
            "endor hq {} reg {:?} recall {}; tcer hq {} reg {:?} recall {}",
            report.endor.high_quality_avg,
            report.endor.regular_avg,
            report.endor.recall_at_k,
            report.tcer.high_quality_avg,
            report.tcer.regular_avg,
            report.tcer.recall_at_k
        ),
    )
}

/// Runs every command into `dir` with the given thread count.
fn all_commands(ws: &Workspace, dir: &Path, threads: &str) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let t = ["--threads", threads];
    let data = ws.run.join("data");
    run_ok(
        tcer()
            .args(t)
            .arg("fit")
            .arg("--corpus")
            .arg(data.join("general.txt"))
            .arg("--vocab")
            .arg(data.join("vocab.json"))
            .arg("--out")
            .arg(dir.join("fit.json"))
            .args(["--epochs", "15", "--seed", "3"]),
    )?;
    run_ok(
        tcer()
            .args(t)
            .arg("fit")
            .arg("--corpus")
            .arg(data.join("general.txt"))
            .arg("--vocab")
            .arg(data.join("vocab.json"))
            .arg("--out")
            .arg(dir.join("fit_neural.json"))
            .args([
                "--kind",
                "neural",
                "--epochs",
                "2",
                "--batch-size",
                "64",
                "--seed",
                "3",
            ]),
    )?;
    for (name, reward) in [("rl_tcer", "tcer"), ("rl_endor", "endor")] {
        let mut args = vec!["--threads", threads, "--steps", "40", "--seed", "5"];
        args.extend(["--reward", reward]);
        rl(ws, &dir.join(name), &args)?;
    }
    let input = dir.join("score_input.jsonl");
    fs::write(
        &input,
        "{\"tokens\": [0, 1, 2, 3], \"prompt\": [4], \"sentences\": [[0, 2], [2, 4]]}\n\
         {\"tokens\": [5, 6, 7], \"sentences\": [[0, 1], [1, 3]]}\n\
         {\"tokens\": [1, 2], \"p\": [0.5, 0.9], \"q\": [0.25, 0.3]}\n",
    )
    .map_err(|e| e.to_string())?;
    run_ok(
        tcer()
            .args(t)
            .arg("score")
            .arg("--pi-s")
            .arg(ws.run.join("pi_s.json"))
            .arg("--pi-b")
            .arg(ws.run.join("pi_b.json"))
            .arg("--input")
            .arg(&input)
            .arg("--out")
            .arg(dir.join("scores.jsonl")),
    )?;
    fs::write(dir.join("labels.json"), LABELS_FIXTURE).map_err(|e| e.to_string())?;
    fs::write(dir.join("fixture.jsonl"), SCORES_FIXTURE).map_err(|e| e.to_string())?;
    run_ok(
        tcer()
            .args(t)
            .arg("analyze")
            .arg("--scores")
            .arg(dir.join("fixture.jsonl"))
            .arg("--labels")
            .arg(dir.join("labels.json"))
            .arg("--log")
            .arg(dir.join("rl_tcer/runlog.jsonl"))
            .arg("--out")
            .arg(dir.join("analysis.json")),
    )?;
    run_ok(
        tcer()
            .args(t)
            .arg("compare")
            .arg("--a")
            .arg(dir.join("rl_endor/runlog.jsonl"))
            .arg("--b")
            .arg(dir.join("rl_tcer/runlog.jsonl"))
            .arg("--out")
            .arg(dir.join("comparison.csv"))
            .arg("--summary")
            .arg(dir.join("summary.json")),
    )?;
    run_ok(
        tcer()
            .args(t)
            .arg("testbed")
            .arg("--spec")
            .arg(default_spec_path())
            .arg("--out")
            .arg(dir.join("testbed"))
            .args(["--steps", "40", "--seed", "2"]),
    )?;
    run_ok(
        tcer()
            .args(t)
            .arg("verify")
            .args([
                "--suite",
                "all",
                "--samples",
                "3000",
                "--seed",
                "9",
                "--out",
            ])
            .arg(dir.join("verify.json")),
    )
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_11(ws: &Workspace) -> Outcome {
    let one = ws.root.join("threads1");
    let eight = ws.root.join("threads8");
    if let Err(e) = all_commands(ws, &one, "1").and_then(|_| all_commands(ws, &eight, "8")) {
        return outcome(false, e);
    }
    let files = files_under(&one);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(one.join(f)).ok() != fs::read(eight.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let same_set = files == files_under(&eight);
    let ok = differing.is_empty() && same_set && !files.is_empty();
    let detail = if ok {
        format!(
            "{} output files byte-identical across 7 commands",
            files.len()
        )
    } else {
        format!("differing: {differing:?}; same file set: {same_set}")
    };
    outcome(ok, detail)
}

fn main() -> ExitCode {
    let ws = workspace();
    let (c8, c9) = criteria_8_and_9();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "bound suite", criterion_1()),
        (2, "one-step optimum and linearity", criterion_2()),
        (3, "coverage suite", criterion_3()),
        (4, "correction derivative and diversity gap", criterion_4()),
        (5, "decomposition identity", criterion_5()),
        (6, "GRPO gradient and advantages", criterion_6()),
        (7, "k=0 reduction", criterion_7(&ws)),
        (8, "entropy dynamics", c8),
        (9, "specialization signal", c9),
        (10, "sentence metrics oracle", criterion_10()),
        (11, "thread-count determinism", criterion_11(&ws)),
    ];

    let mut unexpected = false;
    for (id, name, o) in &results {
        let known = KNOWN_RED.contains(id);
        let tag = match (o.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known red)",
        };
        unexpected |= o.pass == known;
        println!("criterion {id:>2} {tag}: {name}: {}", o.detail);
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if unexpected {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
