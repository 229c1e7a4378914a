//! Query-log preprocessing: parsing, sessionization, filtering, time-based
//! splits, vocabulary construction and corpus statistics.
//!
//! The pipeline goes from a raw tab-separated log to a tokenized corpus:
//!
//! 1. [`parse::parse_log`] reads records, normalizing query text and
//!    counting malformed lines.
//! 2. [`pipeline::sessionize`] groups each user's records into sessions
//!    separated by an inactivity gap, collapsing repeated queries.
//! 3. [`pipeline::filter_corpus`] drops rare queries, short sessions and
//!    sparse users, iterating the three rules to a fixed point.
//! 4. [`pipeline::split_by_time`] holds out the final days as a test split
//!    and removes test queries unseen in training.
//! 5. [`vocab::Vocabulary`] maps surviving query strings to dense ids.
//! 6. [`pipeline::compute_stats`] reports per-split corpus statistics.
//!
//! [`run_preprocess`] chains all of it, optionally carving a validation
//! split out of the training range with the same windowing procedure.

pub mod io;
pub mod parse;
pub mod pipeline;
pub mod vocab;

pub use io::{load_corpus, write_corpus, write_stats, write_vocab, LoadedCorpus, StatsFile};
pub use parse::{parse_log, RawRecord, SkipCounts};
pub use pipeline::{
    compute_stats, filter_corpus, sessionize, split_by_time, CorpusStats, SplitStats,
};
pub use vocab::Vocabulary;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A user's session with queries still in text form, before any vocabulary
/// exists. `index` is the chronological ordinal within the user; filtering
/// may leave gaps but never reorders.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSession {
    pub user_id: String,
    pub index: u32,
    pub queries: Vec<String>,
    pub timestamps: Vec<i64>,
}

impl TextSession {
    pub fn start_ts(&self) -> i64 {
        self.timestamps[0]
    }
}

/// All sessions of one user, chronologically ordered, queries in text form.
#[derive(Debug, Clone, PartialEq)]
pub struct TextHistory {
    pub user_id: String,
    pub sessions: Vec<TextSession>,
}

/// A tokenized session: queries are vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub user_id: String,
    pub index: u32,
    pub tokens: Vec<u32>,
    pub timestamps: Vec<i64>,
}

impl Session {
    pub fn start_ts(&self) -> i64 {
        self.timestamps[0]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// All tokenized sessions of one user, chronologically ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct UserHistory {
    pub user_id: String,
    pub sessions: Vec<Session>,
}

/// Knobs for the whole preprocessing pipeline. Defaults mirror the usual
/// 30-minute gap and the occurrence/length/user thresholds used with the
/// AOL log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub session_gap_secs: i64,
    /// Collapse consecutive identical queries within a session.
    pub collapse_repeats: bool,
    pub min_query_count: u64,
    pub min_session_len: usize,
    pub min_user_sessions: usize,
    pub test_window_days: i64,
    /// 0 disables the validation carve-out.
    pub valid_window_days: i64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            session_gap_secs: 1800,
            collapse_repeats: true,
            min_query_count: 20,
            min_session_len: 6,
            min_user_sessions: 5,
            test_window_days: 30,
            valid_window_days: 30,
        }
    }
}

/// Everything the preprocessing step produces.
#[derive(Debug, Clone)]
pub struct PreprocessOutput {
    pub train: Vec<UserHistory>,
    pub valid: Vec<UserHistory>,
    pub test: Vec<UserHistory>,
    pub vocab: Vocabulary,
    pub stats: StatsFile,
    pub skipped: SkipCounts,
}

/// Runs the full pipeline over parsed records.
///
/// The test split is carved off the end of the timeline first; the
/// validation split is then carved off the end of the remaining training
/// range with the same procedure. Because validation removal shrinks the
/// training vocabulary, the test split is pruned once more against the final
/// vocabulary, so every emitted token is a training token.
pub fn run_preprocess(
    records: Vec<RawRecord>,
    skipped: SkipCounts,
    options: &PreprocessOptions,
) -> Result<PreprocessOutput> {
    if options.min_query_count < 1 || options.min_session_len < 1 || options.min_user_sessions < 1
    {
        return Err(Error::Config("filter thresholds must be at least 1".into()));
    }
    if options.session_gap_secs <= 0 {
        return Err(Error::Config("session gap must be positive".into()));
    }
    if options.test_window_days < 1 {
        return Err(Error::Config("test window must be at least one day".into()));
    }

    let histories = sessionize(records, options.session_gap_secs, options.collapse_repeats);
    let filtered = filter_corpus(
        histories,
        options.min_query_count,
        options.min_session_len,
        options.min_user_sessions,
    )?;

    let latest = pipeline::latest_timestamp(&filtered).ok_or(Error::EmptyCorpus)?;
    let test_cutoff = latest - options.test_window_days * 86_400;
    let (mut train, mut test) = pipeline::split_at_cutoff(filtered, test_cutoff);

    let valid_cutoff = if options.valid_window_days > 0 {
        test_cutoff - options.valid_window_days * 86_400
    } else {
        test_cutoff
    };
    let mut valid = Vec::new();
    if options.valid_window_days > 0 {
        let (t, v) = pipeline::split_at_cutoff(train, valid_cutoff);
        train = t;
        valid = v;
        // The validation carve-out shrank the training vocabulary; prune the
        // test split against it again.
        test = pipeline::prune_against_train(&train, test);
    }

    if train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if test.is_empty() {
        return Err(Error::EmptyTestSplit);
    }

    let vocab = Vocabulary::build(&train);
    let train_tok = vocab.tokenize(&train)?;
    let valid_tok = vocab.tokenize(&valid)?;
    let test_tok = vocab.tokenize(&test)?;

    let stats = StatsFile {
        options: options.clone(),
        test_cutoff_unix: test_cutoff,
        valid_cutoff_unix: valid_cutoff,
        stats: compute_stats(&train_tok, &valid_tok, &test_tok),
    };

    Ok(PreprocessOutput {
        train: train_tok,
        valid: valid_tok,
        test: test_tok,
        vocab,
        stats,
        skipped,
    })
}
