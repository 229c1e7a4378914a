//! Implementations of the subcommands.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use ahnqs::adj::AdjacencyIndex;
use ahnqs::batcher;
use ahnqs::eval::{
    self, evaluate_report, AdjScorer, BucketBy, ModelScorer, TraceTarget,
};
use ahnqs::models::checkpoint::{load_checkpoint, save_checkpoint};
use ahnqs::models::{Model, ModelKind};
use ahnqs::querylog::{
    self, load_corpus, parse_log, run_preprocess, LoadedCorpus, PreprocessOptions, Vocabulary,
};
use ahnqs::training::{self, EpochReport, TrainConfig, TrainObserver};

use crate::{
    DumpScheduleArgs, EvaluateArgs, ExportStatesArgs, PreprocessArgs, SuggestArgs, TrainArgs,
};

const CORPUS_FILE: &str = "corpus.tsv";
const VOCAB_FILE: &str = "vocab.tsv";
const STATS_FILE: &str = "stats.json";

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("no such file: {}", path.display());
    }
    Ok(())
}

fn load_data_dir(dir: &Path) -> Result<LoadedCorpus> {
    let corpus = dir.join(CORPUS_FILE);
    let vocab = dir.join(VOCAB_FILE);
    let stats = dir.join(STATS_FILE);
    for p in [&corpus, &vocab, &stats] {
        require_file(p)?;
    }
    load_corpus(&corpus, &vocab, &stats)
        .with_context(|| format!("loading corpus from {}", dir.display()))
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    require_file(&args.input)?;
    let options = PreprocessOptions {
        session_gap_secs: args.session_gap_secs,
        collapse_repeats: !args.keep_repeats,
        min_query_count: args.min_query_count,
        min_session_len: args.min_session_len,
        min_user_sessions: args.min_user_sessions,
        test_window_days: args.test_window_days,
        valid_window_days: args.valid_window_days,
    };

    let reader = BufReader::new(
        File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?,
    );
    let (records, skipped) = parse_log(reader)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let output = run_preprocess(records, skipped, &options)?;

    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    querylog::write_corpus(
        &args.out_dir.join(CORPUS_FILE),
        &[&output.train, &output.valid, &output.test],
    )?;
    querylog::write_vocab(&args.out_dir.join(VOCAB_FILE), &output.vocab)?;
    querylog::write_stats(&args.out_dir.join(STATS_FILE), &output.stats)?;

    if output.skipped.total() > 0 {
        eprintln!(
            "skipped lines: {} (missing fields {}, bad timestamps {}, empty queries {})",
            output.skipped.total(),
            output.skipped.too_few_fields,
            output.skipped.bad_timestamp,
            output.skipped.empty_query
        );
    }
    println!("{}", serde_json::to_string_pretty(&output.stats.stats)?);
    Ok(())
}

/// Optional overrides loaded from `--config`; any subset of the training
/// fields may appear.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    momentum: Option<f64>,
    dropout: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    hidden_dim: Option<usize>,
    min_negatives: Option<usize>,
    grad_clip: Option<f64>,
}

fn resolve_train_config(args: &TrainArgs, kind: ModelKind) -> Result<TrainConfig> {
    let mut config = TrainConfig::defaults_for(kind);
    if let Some(path) = &args.config {
        require_file(path)?;
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let overrides: TrainOverrides = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        apply_overrides(&mut config, &overrides);
    }
    let flag_overrides = TrainOverrides {
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        momentum: args.momentum,
        dropout: args.dropout,
        epochs: args.epochs,
        seed: args.seed,
        hidden_dim: args.hidden_dim,
        min_negatives: args.min_negatives,
        grad_clip: args.grad_clip,
    };
    apply_overrides(&mut config, &flag_overrides);
    Ok(config)
}

fn apply_overrides(config: &mut TrainConfig, o: &TrainOverrides) {
    if let Some(v) = o.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = o.momentum {
        config.momentum = v;
    }
    if let Some(v) = o.dropout {
        config.dropout = v;
    }
    if let Some(v) = o.epochs {
        config.epochs = v;
    }
    if let Some(v) = o.seed {
        config.seed = v;
    }
    if let Some(v) = o.hidden_dim {
        config.hidden_dim = v;
    }
    if let Some(v) = o.min_negatives {
        config.min_negatives = v;
    }
    if o.grad_clip.is_some() {
        config.grad_clip = o.grad_clip;
    }
}

/// Prints epoch summaries and appends JSON lines to the log file.
struct EpochLogger {
    log: Option<BufWriter<File>>,
}

impl TrainObserver for EpochLogger {
    fn epoch(&mut self, report: &EpochReport) {
        let mut line = format!(
            "epoch {:>3}  loss {:.6}  {:6.2}s",
            report.epoch, report.mean_loss, report.wall_secs
        );
        if let (Some(mrr), Some(recall)) = (report.val_mrr, report.val_recall) {
            line.push_str(&format!("  val mrr@10 {mrr:.4}  recall@10 {recall:.4}"));
        }
        println!("{line}");
        if let Some(w) = &mut self.log {
            if let Ok(json) = serde_json::to_string(report) {
                let _ = writeln!(w, "{json}");
                let _ = w.flush();
            }
        }
    }
}

fn parse_kind(name: &str) -> Result<ModelKind> {
    ModelKind::parse(name)
        .with_context(|| format!("unknown model kind {name:?} (expected nqs, hnqs or ahnqs)"))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let kind = parse_kind(&args.model)?;
    let config = resolve_train_config(&args, kind)?;
    let corpus = load_data_dir(&args.data)?;

    let log = match &args.log {
        Some(path) => Some(BufWriter::new(
            File::options()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?,
        )),
        None => None,
    };
    let mut observer = EpochLogger { log };

    let valid = (!corpus.valid.is_empty()).then_some(corpus.valid.as_slice());
    let (model, _report) = training::train_with_observer(
        &corpus.train,
        valid,
        corpus.vocab.len(),
        kind,
        &config,
        &mut observer,
    )?;

    let vocab_path = args.data.join(VOCAB_FILE);
    save_checkpoint(&model, &vocab_path.to_string_lossy(), &args.checkpoint)?;
    println!("checkpoint written to {}", args.checkpoint.display());
    Ok(())
}

fn parse_bucket_by(name: &str) -> Result<BucketBy> {
    match name {
        "context" => Ok(BucketBy::Context),
        "session" => Ok(BucketBy::WholeSession),
        other => bail!("unknown bucket-by {other:?} (expected context or session)"),
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let corpus = load_data_dir(&args.data)?;
    if corpus.test.is_empty() {
        bail!("empty test split in {}", args.data.display());
    }
    let bucket_by = parse_bucket_by(&args.bucket_by)?;
    let context = eval::merge_context(&corpus.train, &corpus.valid);

    let (label, report) = match (&args.checkpoint, args.baseline.as_deref()) {
        (Some(_), Some(_)) => bail!("pass either --checkpoint or --baseline, not both"),
        (None, None) => bail!("pass --checkpoint or --baseline"),
        (None, Some("adj")) => {
            let index = AdjacencyIndex::build(&corpus.train);
            let mut scorer = AdjScorer::new(&index);
            let (report, _) =
                evaluate_report(&mut scorer, &context, &corpus.test, args.top_k, bucket_by)?;
            ("adj".to_string(), report)
        }
        (None, Some(other)) => bail!("unknown baseline {other:?} (supported: adj)"),
        (Some(path), None) => {
            require_file(path)?;
            let (model, _) = load_checkpoint(path)?;
            if model.config.vocab_size != corpus.vocab.len() {
                bail!(
                    "vocabulary mismatch: checkpoint was trained over {} tokens, corpus has {}",
                    model.config.vocab_size,
                    corpus.vocab.len()
                );
            }
            let mut scorer = ModelScorer::new(&model);
            let (report, _) =
                evaluate_report(&mut scorer, &context, &corpus.test, args.top_k, bucket_by)?;
            (model.config.kind.name().to_string(), report)
        }
    };

    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = &args.report {
        std::fs::write(path, format!("{json}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.tsv {
        let mut w = BufWriter::new(
            File::create(path).with_context(|| format!("writing {}", path.display()))?,
        );
        report.write_tsv(&label, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn load_model_and_vocab(args: &SuggestArgs) -> Result<(Model, Vocabulary)> {
    require_file(&args.checkpoint)?;
    let (model, recorded_vocab) = load_checkpoint(&args.checkpoint)?;
    let vocab_path = match &args.vocab {
        Some(p) => p.clone(),
        None => PathBuf::from(recorded_vocab),
    };
    require_file(&vocab_path)?;
    let vocab = querylog::io::load_vocab(&vocab_path)?;
    if vocab.len() != model.config.vocab_size {
        bail!(
            "vocabulary mismatch: checkpoint expects {} tokens, {} holds {}",
            model.config.vocab_size,
            vocab_path.display(),
            vocab.len()
        );
    }
    Ok((model, vocab))
}

fn print_ranked(vocab: &Vocabulary, scores: &ahnqs::linalg::Vector, k: usize) {
    for (rank, token) in ahnqs::models::top_k_of(scores, k).into_iter().enumerate() {
        println!(
            "{:>2}. {}  ({:+.4})",
            rank + 1,
            vocab.token(token).unwrap_or("?"),
            scores[token as usize]
        );
    }
}

pub fn suggest(args: SuggestArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args)?;

    if !args.queries.is_empty() {
        // One-shot: the arguments form a single session prefix.
        let mut prefix = Vec::with_capacity(args.queries.len());
        for q in &args.queries {
            let normalized = querylog::parse::normalize_query(q);
            let token = vocab
                .id(&normalized)
                .with_context(|| format!("unknown query: {normalized:?}"))?;
            prefix.push(token);
        }
        let mut state = model.new_state(false);
        for &t in &prefix {
            model.observe(&mut state, t)?;
        }
        let scores = model.score_state(&state).scores;
        print_ranked(&vocab, &scores, args.top_k);
        return Ok(());
    }

    // Interactive: one query per line; a blank line ends the session (the
    // user-level state updates); unknown queries leave the state untouched.
    let mut state = model.new_state(false);
    let mut session_open = false;
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line?;
        let normalized = querylog::parse::normalize_query(&line);
        if normalized.is_empty() {
            if session_open {
                model.end_session(&mut state, None)?;
                session_open = false;
                println!("-- session ended --");
            }
            continue;
        }
        let Some(token) = vocab.id(&normalized) else {
            println!("unknown query: {normalized:?}");
            continue;
        };
        model.observe(&mut state, token)?;
        session_open = true;
        let scores = model.score_state(&state).scores;
        print_ranked(&vocab, &scores, args.top_k);
    }
    Ok(())
}

pub fn export_states(args: ExportStatesArgs) -> Result<()> {
    require_file(&args.checkpoint)?;
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let corpus = load_data_dir(&args.data)?;
    if model.config.vocab_size != corpus.vocab.len() {
        bail!(
            "vocabulary mismatch: checkpoint was trained over {} tokens, corpus has {}",
            model.config.vocab_size,
            corpus.vocab.len()
        );
    }
    let everything = eval::merge_context(
        &eval::merge_context(&corpus.train, &corpus.valid),
        &corpus.test,
    );
    let target = match args.session {
        Some(index) => TraceTarget::Session { user: args.user.clone(), index },
        None => TraceTarget::User { user: args.user.clone() },
    };
    let matrix = eval::export_states(&model, &everything, &target)?;
    let mut w = BufWriter::new(
        File::create(&args.out).with_context(|| format!("writing {}", args.out.display()))?,
    );
    matrix.write_csv(&mut w)?;
    w.flush()?;
    println!("{}x{} state matrix written to {}", matrix.rows, matrix.cols, args.out.display());
    Ok(())
}

pub fn dump_schedule(args: DumpScheduleArgs) -> Result<()> {
    let corpus = load_data_dir(&args.data)?;
    let steps: Vec<batcher::BatchStep> =
        batcher::schedule(&corpus.train, args.batch_size, args.seed)?.collect();
    match &args.out {
        Some(path) => {
            let mut w = BufWriter::new(
                File::create(path).with_context(|| format!("writing {}", path.display()))?,
            );
            batcher::write_schedule_tsv(&steps, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            batcher::write_schedule_tsv(&steps, &mut w)?;
        }
    }
    Ok(())
}
