//! Command-line front end for the query-suggestion pipeline.
//!
//! Subcommands: `preprocess` a raw query log into a corpus directory,
//! `train` a model on it, `evaluate` a checkpoint or the co-occurrence
//! baseline, `suggest` interactively or one-shot, `export-states` for
//! hidden-state heatmaps, and `dump-schedule` to inspect mini-batching.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ahnqs", version, about = "Recurrent query-suggestion models over search logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, sessionize, filter and split a raw tab-separated query log.
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed corpus.
    Train(TrainArgs),
    /// Score a checkpoint or the adjacency baseline on the test split.
    Evaluate(EvaluateArgs),
    /// Rank next-query suggestions for a prefix, one-shot or interactively.
    Suggest(SuggestArgs),
    /// Export session-level or user-level hidden states as CSV.
    ExportStates(ExportStatesArgs),
    /// Write the session-parallel batch schedule as TSV.
    DumpSchedule(DumpScheduleArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Raw log: tab-separated with header AnonID/Query/QueryTime/ItemRank/ClickURL.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for corpus.tsv, vocab.tsv and stats.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Inactivity gap that closes a session, in seconds.
    #[arg(long, default_value_t = 1800)]
    session_gap_secs: i64,
    /// Drop queries occurring fewer times than this corpus-wide.
    #[arg(long, default_value_t = 20)]
    min_query_count: u64,
    /// Drop sessions left shorter than this many queries.
    #[arg(long, default_value_t = 6)]
    min_session_len: usize,
    /// Drop users left with fewer sessions than this.
    #[arg(long, default_value_t = 5)]
    min_user_sessions: usize,
    /// Days held out at the end of the timeline as the test split.
    #[arg(long, default_value_t = 30)]
    test_window_days: i64,
    /// Days carved off the training range as validation (0 disables).
    #[arg(long, default_value_t = 30)]
    valid_window_days: i64,
    /// Keep consecutive repeated queries instead of collapsing them.
    #[arg(long)]
    keep_repeats: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory produced by `preprocess`.
    #[arg(long)]
    data: PathBuf,
    /// Model kind: nqs, hnqs or ahnqs.
    #[arg(long)]
    model: String,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON file with training-parameter overrides (flat key/value,
    /// field names as in the defaults printed by --help).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_negatives: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Append one JSON line per epoch here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Corpus directory produced by `preprocess`.
    #[arg(long)]
    data: PathBuf,
    /// Trained checkpoint to score.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score a baseline instead of a checkpoint (supported: adj).
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Write the report as JSON here (also printed to stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write flat TSV rows (model, bucket, metric, value) here.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Bucket points by prediction-context length or whole-session length.
    #[arg(long, default_value = "context")]
    bucket_by: String,
}

#[derive(Args)]
struct SuggestArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary file; defaults to the path recorded in the checkpoint.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// One-shot prefix queries; with none given, reads queries line by line
    /// from stdin (a blank line ends the session).
    queries: Vec<String>,
}

#[derive(Args)]
struct ExportStatesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// User whose states to trace.
    #[arg(long)]
    user: String,
    /// A per-user session index: trace its session-level states after each
    /// query. Without it, trace user-level states after each session.
    #[arg(long)]
    session: Option<u32>,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpScheduleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// TSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Suggest(args) => commands::suggest(args),
        Command::ExportStates(args) => commands::export_states(args),
        Command::DumpSchedule(args) => commands::dump_schedule(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
