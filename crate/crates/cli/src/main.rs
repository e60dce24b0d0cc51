//! `tcer`: fit policies, train with reference-augmented GRPO, score text,
//! analyze runs, run testbeds and verify the reward kernel.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (including a failed
//! verification).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "tcer",
    version,
    about = "Endogenous and triviality-corrected rewards for small softmax policies"
)]
struct Cli {
    /// Worker threads; results are identical for every value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a policy to a corpus by maximum likelihood.
    Fit(FitArgs),
    /// Train an actor with reference-augmented GRPO.
    Rl(RlArgs),
    /// Score token sequences with EndoR and TCER.
    Score(ScoreArgs),
    /// Sentence-level metrics against quality labels, or entropy statistics
    /// of a run log.
    Analyze(AnalyzeArgs),
    /// Step-by-step comparison of two run logs.
    Compare(CompareArgs),
    /// Generate a synthetic testbed and run its experiment.
    Testbed(TestbedArgs),
    /// Randomized property suites over the reward kernel and GRPO loss.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to start from; its vocabulary is used as is.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Vocabulary JSON used when no init checkpoint is given; built from the
    /// corpus otherwise.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// `tabular` or `neural`, for a fresh policy.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct RewardFlags {
    #[arg(long)]
    pub reward: Option<String>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct GrpoFlags {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    #[arg(long)]
    pub kl_beta: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub prompts_per_step: Option<usize>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub train_on_reference: Option<bool>,
}

#[derive(Args, Debug)]
pub struct RlArgs {
    #[arg(long)]
    pub actor: PathBuf,
    #[arg(long = "pi-s")]
    pub pi_s: PathBuf,
    #[arg(long = "pi-b")]
    pub pi_b: PathBuf,
    /// JSONL records `{"prompt": text, "reference": text}`.
    #[arg(long)]
    pub prompts: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tokenizer: Option<String>,
    #[command(flatten)]
    pub reward: RewardFlags,
    #[command(flatten)]
    pub grpo: GrpoFlags,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long = "pi-s")]
    pub pi_s: Option<PathBuf>,
    #[arg(long = "pi-b")]
    pub pi_b: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub reward: RewardFlags,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Run log whose entropy trajectory is summarised.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON file for the summary booleans and final deltas.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TestbedArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// `endor` or `tcer`; `entropy_preserved` specs add an EndoR baseline.
    #[arg(long, default_value = "tcer")]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Root directory; outputs go under `<out>/<spec name>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Only write the generated corpora, prompts and vocabulary.
    #[arg(long)]
    pub generate_only: bool,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, hide = true, allow_hyphen_values = true)]
    pub debug_epsilon: Option<f64>,
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Fit(a) => commands::fit(a),
        Command::Rl(a) => commands::rl(a),
        Command::Score(a) => commands::score(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Compare(a) => commands::compare(a),
        Command::Testbed(a) => commands::testbed(a),
        Command::Verify(a) => commands::verify(a),
    }
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return Err(CliError::silent(code));
        }
    };
    let threads = match cli.threads {
        Some(0) => return Err(CliError::usage("--threads must be >= 1")),
        Some(n) => n,
        None => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(msg) = &e.message {
                eprintln!("tcer: {msg}");
            }
            ExitCode::from(e.code)
        }
    }
}
