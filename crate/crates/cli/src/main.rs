//! `gar`: batch workflows over JSONL corpora. Each subcommand reads one or
//! two JSONL inputs, writes a manifest record followed by its output records,
//! and exits 0 on success, 1 on a validation error, 2 on a runtime error.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gar_core::slicer::Provenance;
use gar_core::toyenv::Mode;

#[derive(Debug)]
pub(crate) enum CliError {
    /// Bad flags, bad config values, conflicting paths. Exit 1.
    Validation(String),
    /// I/O failures, malformed data, endpoint failures. Exit 2.
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "gar",
    version,
    about = "Batch tools for adversarial reasoner training: trace slicing, \
             slice judging, reward assembly, corpus preparation, entropy \
             profiling and a desk-scale training simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment reasoning traces into contiguous slices under a token budget
    Slice(SliceArgs),
    /// Judge slice soundness through a chat-completions endpoint
    Judge(JudgeArgs),
    /// Combine exact-match and judged-slice rewards per trace
    Reward(RewardArgs),
    /// Build a balanced labelled-slice set from judgments
    SftBuild(SftBuildArgs),
    /// Mix generated and reference slices into one provenance batch
    Mix(MixArgs),
    /// Run the desk-scale training simulator and write its report
    TrainToy(TrainToyArgs),
    /// Entropy profiles of traces with a correct-vs-wrong summary
    Entropy(EntropyArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ProvenanceArg {
    Generated,
    Reference,
}

impl From<ProvenanceArg> for Provenance {
    fn from(p: ProvenanceArg) -> Self {
        match p {
            ProvenanceArg::Generated => Provenance::Generated,
            ProvenanceArg::Reference => Provenance::Reference,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ModeArg {
    Full,
    StandardRl,
    FixedDiscriminator,
    NoAlignment,
    NoGan,
    PartialTrace,
    Distill,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::StandardRl => Mode::StandardRl,
            ModeArg::FixedDiscriminator => Mode::FixedDiscriminator,
            ModeArg::NoAlignment => Mode::NoAlignment,
            ModeArg::NoGan => Mode::NoGan,
            ModeArg::PartialTrace => Mode::PartialTrace,
            ModeArg::Distill => Mode::Distill,
        }
    }
}

#[derive(Args)]
struct SliceArgs {
    /// Input traces (JSONL)
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output slices (JSONL); stdout when omitted
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Token budget per slice (L)
    #[arg(long, default_value_t = 320)]
    max_tokens: usize,
    /// Provenance recorded on every slice
    #[arg(long, value_enum, default_value_t = ProvenanceArg::Generated)]
    provenance: ProvenanceArg,
}

#[derive(Args)]
struct JudgeArgs {
    /// Input slices (JSONL)
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output judgments (JSONL); stdout when omitted
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Chat-completions endpoint; GAR_ENDPOINT when omitted
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    /// Model name sent with every request; GAR_MODEL when omitted
    #[arg(long)]
    model: Option<String>,
    /// Response token budget (K); longer responses are truncated before
    /// verdict extraction
    #[arg(long, default_value_t = 128)]
    max_new_tokens: usize,
    /// Concurrent in-flight requests
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// Attempts per request before giving up
    #[arg(long, default_value_t = 5)]
    max_attempts: u32,
    /// Per-request timeout, seconds
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
}

#[derive(Args)]
struct RewardArgs {
    /// Traces with answers and ground truth (JSONL)
    #[arg(long, value_name = "PATH")]
    traces: PathBuf,
    /// Judgments over the traces' slices (JSONL)
    #[arg(long, value_name = "PATH")]
    judgments: PathBuf,
    /// Output reward rows (JSONL); stdout when omitted
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Weight on the exact-match reward
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    lambda1: f64,
    /// Weight on the mean slice-soundness reward
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    lambda2: f64,
    /// Weight on the provenance-game reward (reported only)
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    lambda3: f64,
    /// Weight on the verdict-alignment reward (reported only)
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    lambda4: f64,
}

#[derive(Args)]
struct SftBuildArgs {
    /// Slices the judgments refer to (JSONL)
    #[arg(long, value_name = "PATH")]
    slices: PathBuf,
    /// Judgments carrying verdicts (JSONL)
    #[arg(long, value_name = "PATH")]
    judgments: PathBuf,
    /// Output labelled examples (JSONL); stdout when omitted
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Seed for downsampling and shuffling
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MixArgs {
    /// Generated slices (JSONL)
    #[arg(long = "gen", value_name = "PATH")]
    generated: PathBuf,
    /// Reference slices (JSONL)
    #[arg(long = "ref", value_name = "PATH")]
    reference: PathBuf,
    /// Output provenance batch (JSONL, one record); stdout when omitted
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Seed for drawing the balanced batch
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Training config (JSON); defaults fill missing fields
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Training mode. Without --config this selects the mode's preset
    /// weights; with --config it overrides the file's mode only.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Run seed
    #[arg(long)]
    seed: Option<u64>,
    /// Episode budget
    #[arg(long)]
    episodes: Option<usize>,
    /// Weight on the exact-match reward
    #[arg(long, allow_negative_numbers = true)]
    lambda1: Option<f64>,
    /// Weight on the mean slice-soundness reward
    #[arg(long, allow_negative_numbers = true)]
    lambda2: Option<f64>,
    /// Weight on the discriminator's provenance-game reward
    #[arg(long, allow_negative_numbers = true)]
    lambda3: Option<f64>,
    /// Weight on the discriminator's verdict-alignment reward
    #[arg(long, allow_negative_numbers = true)]
    lambda4: Option<f64>,
    /// Output report (JSON line after the manifest); stdout when omitted
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Sidecar with per-episode wall times; reports stay byte-reproducible
    /// because timings live only here
    #[arg(long, value_name = "PATH")]
    timing_out: Option<PathBuf>,
}

#[derive(Args)]
struct EntropyArgs {
    /// Input traces with per_token_entropies and final_correct (JSONL)
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output profiles plus a trailing split_summary record (JSONL);
    /// stdout when omitted
    #[arg(long = "out", value_name = "PATH")]
    output: Option<PathBuf>,
    /// Entropies at or below this threshold count as zero, nats
    #[arg(long, default_value_t = gar_core::analytics::DEFAULT_ZERO_TAU)]
    tau: f64,
    /// Histogram bins in the stderr table
    #[arg(long, default_value_t = 10)]
    bins: usize,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap sends --help and --version to stdout (exit 0); anything
            // else is a usage error on stderr.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Slice(a) => commands::slice(a),
        Command::Judge(a) => commands::judge(a),
        Command::Reward(a) => commands::reward(a),
        Command::SftBuild(a) => commands::sft_build(a),
        Command::Mix(a) => commands::mix(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Entropy(a) => commands::entropy(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
