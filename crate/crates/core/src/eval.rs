//! Ranking evaluation: MRR@K and Recall@K overall and per session-length
//! bucket, plus hidden-state export for heatmap-style inspection.
//!
//! Evaluation walks each test user's timeline: their training-period
//! sessions feed the model's user-level state (a no-op for the session-only
//! kind), then every test session is scored one query at a time — after
//! each prefix the model ranks the true next query against the whole
//! vocabulary.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::adj::AdjacencyIndex;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::models::{Model, ModelKind, SlotState};
use crate::querylog::UserHistory;

/// One (prefix -> next query) evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPoint {
    pub user_id: String,
    pub session_index: u32,
    /// Queries provided before the prediction; at least 1.
    pub prefix_len: usize,
    /// Whole length of the session the point came from.
    pub session_len: usize,
    pub target: u32,
    /// 1-based rank of the target, `None` when the scorer cannot rank it at
    /// all (scored as infinitely bad).
    pub rank: Option<usize>,
}

/// Session-length buckets. The boundary counts are query counts in the
/// prediction context: the prefix plus the predicted position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bucket {
    Short,
    Medium,
    Long,
}

impl Bucket {
    pub fn label(self) -> &'static str {
        match self {
            Bucket::Short => "short",
            Bucket::Medium => "medium",
            Bucket::Long => "long",
        }
    }

    fn of_context(len: usize) -> Bucket {
        match len {
            0..=2 => Bucket::Short,
            3..=4 => Bucket::Medium,
            _ => Bucket::Long,
        }
    }
}

/// What "session length" means for bucketing: the number of queries in the
/// prediction context (default), or the whole session's query count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BucketBy {
    #[default]
    Context,
    WholeSession,
}

impl BucketBy {
    fn bucket(self, point: &PredictionPoint) -> Bucket {
        match self {
            BucketBy::Context => Bucket::of_context(point.prefix_len + 1),
            BucketBy::WholeSession => Bucket::of_context(point.session_len),
        }
    }
}

/// MRR@K, Recall@K and the population they were computed over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub mrr: f64,
    pub recall: f64,
    pub points: u64,
}

impl MetricRow {
    fn from_ranks<'a, I: Iterator<Item = &'a PredictionPoint>>(points: I, k: usize) -> MetricRow {
        let mut n = 0u64;
        let mut mrr_sum = 0.0;
        let mut hits = 0u64;
        for p in points {
            n += 1;
            if let Some(rank) = p.rank {
                if rank <= k {
                    hits += 1;
                    mrr_sum += 1.0 / rank as f64;
                }
            }
        }
        MetricRow {
            mrr: if n > 0 { mrr_sum / n as f64 } else { 0.0 },
            recall: if n > 0 { hits as f64 / n as f64 } else { 0.0 },
            points: n,
        }
    }
}

/// The full evaluation result.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub k: usize,
    pub overall: MetricRow,
    pub short: MetricRow,
    pub medium: MetricRow,
    pub long: MetricRow,
}

impl EvalReport {
    pub fn bucket(&self, b: Bucket) -> &MetricRow {
        match b {
            Bucket::Short => &self.short,
            Bucket::Medium => &self.medium,
            Bucket::Long => &self.long,
        }
    }

    /// Flat TSV, one row per (model, bucket, metric).
    pub fn write_tsv<W: Write>(&self, model: &str, out: &mut W) -> Result<()> {
        for (bucket, row) in [
            ("overall", &self.overall),
            ("short", &self.short),
            ("medium", &self.medium),
            ("long", &self.long),
        ] {
            writeln!(out, "{model}\t{bucket}\tmrr@{}\t{:.6}", self.k, row.mrr)?;
            writeln!(out, "{model}\t{bucket}\trecall@{}\t{:.6}", self.k, row.recall)?;
            writeln!(out, "{model}\t{bucket}\tpoints\t{}", row.points)?;
        }
        Ok(())
    }
}

/// Aggregates scored points into the overall and per-bucket rows.
pub fn report_from_points(points: &[PredictionPoint], k: usize, by: BucketBy) -> EvalReport {
    EvalReport {
        k,
        overall: MetricRow::from_ranks(points.iter(), k),
        short: MetricRow::from_ranks(points.iter().filter(|p| by.bucket(p) == Bucket::Short), k),
        medium: MetricRow::from_ranks(points.iter().filter(|p| by.bucket(p) == Bucket::Medium), k),
        long: MetricRow::from_ranks(points.iter().filter(|p| by.bucket(p) == Bucket::Long), k),
    }
}

/// Anything that can walk a user's sessions and rank next-query candidates.
pub trait SequentialScorer {
    fn begin_user(&mut self);
    fn observe(&mut self, token: u32) -> Result<()>;
    /// Rank of `target` as the next query given everything observed so far.
    fn rank_of(&mut self, target: u32) -> Option<usize>;
    fn end_session(&mut self) -> Result<()>;
}

/// A neural model walking its per-slot state.
pub struct ModelScorer<'a> {
    model: &'a Model,
    state: SlotState,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a Model) -> Self {
        let state = model.new_state(false);
        ModelScorer { model, state }
    }
}

impl SequentialScorer for ModelScorer<'_> {
    fn begin_user(&mut self) {
        self.model.begin_user(&mut self.state);
    }

    fn observe(&mut self, token: u32) -> Result<()> {
        self.model.observe(&mut self.state, token)
    }

    fn rank_of(&mut self, target: u32) -> Option<usize> {
        Some(self.model.score_state(&self.state).rank_of(target))
    }

    fn end_session(&mut self) -> Result<()> {
        self.model.end_session(&mut self.state, None)?;
        Ok(())
    }
}

/// The co-occurrence baseline: ranks successors of the most recent query.
pub struct AdjScorer<'a> {
    index: &'a AdjacencyIndex,
    last: Option<u32>,
}

impl<'a> AdjScorer<'a> {
    pub fn new(index: &'a AdjacencyIndex) -> Self {
        AdjScorer { index, last: None }
    }
}

impl SequentialScorer for AdjScorer<'_> {
    fn begin_user(&mut self) {
        self.last = None;
    }

    fn observe(&mut self, token: u32) -> Result<()> {
        self.last = Some(token);
        Ok(())
    }

    fn rank_of(&mut self, target: u32) -> Option<usize> {
        self.index.rank_of(self.last?, target)
    }

    fn end_session(&mut self) -> Result<()> {
        self.last = None;
        Ok(())
    }
}

/// Scores every prefix of every test session.
///
/// `context` supplies each user's pre-test sessions (training and validation
/// ranges); they are replayed through the scorer before its test sessions so
/// hierarchical models carry the user's past into the test period.
pub fn evaluate<S: SequentialScorer>(
    scorer: &mut S,
    context: &[UserHistory],
    test: &[UserHistory],
    k: usize,
) -> Result<Vec<PredictionPoint>> {
    if test.iter().all(|h| h.sessions.is_empty()) {
        return Err(Error::EmptyTestSplit);
    }
    if k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let context_by_user: HashMap<&str, &UserHistory> =
        context.iter().map(|h| (h.user_id.as_str(), h)).collect();

    let mut points = Vec::new();
    for user in test {
        scorer.begin_user();
        if let Some(history) = context_by_user.get(user.user_id.as_str()) {
            for session in &history.sessions {
                for &token in &session.tokens {
                    scorer.observe(token)?;
                }
                scorer.end_session()?;
            }
        }
        for session in &user.sessions {
            for pos in 0..session.tokens.len() {
                if pos > 0 {
                    points.push(PredictionPoint {
                        user_id: user.user_id.clone(),
                        session_index: session.index,
                        prefix_len: pos,
                        session_len: session.tokens.len(),
                        target: session.tokens[pos],
                        rank: scorer.rank_of(session.tokens[pos]),
                    });
                }
                scorer.observe(session.tokens[pos])?;
            }
            scorer.end_session()?;
        }
    }
    Ok(points)
}

/// Evaluates and aggregates in one call.
pub fn evaluate_report<S: SequentialScorer>(
    scorer: &mut S,
    context: &[UserHistory],
    test: &[UserHistory],
    k: usize,
    by: BucketBy,
) -> Result<(EvalReport, Vec<PredictionPoint>)> {
    let points = evaluate(scorer, context, test, k)?;
    Ok((report_from_points(&points, k, by), points))
}

/// Merges per-user training and validation histories into one chronological
/// context per user, for evaluating the test split with everything that
/// preceded it.
pub fn merge_context(train: &[UserHistory], valid: &[UserHistory]) -> Vec<UserHistory> {
    let mut by_user: std::collections::BTreeMap<String, UserHistory> = std::collections::BTreeMap::new();
    for h in train.iter().chain(valid) {
        let entry = by_user
            .entry(h.user_id.clone())
            .or_insert_with(|| UserHistory { user_id: h.user_id.clone(), sessions: Vec::new() });
        entry.sessions.extend(h.sessions.iter().cloned());
    }
    let mut out: Vec<UserHistory> = by_user.into_values().collect();
    for h in &mut out {
        h.sessions.sort_by_key(|s| s.index);
    }
    out
}

/// What to trace for state export.
#[derive(Debug, Clone)]
pub enum TraceTarget {
    /// Session-level hidden states after each query of one session.
    Session { user: String, index: u32 },
    /// User-level hidden states after each session of one user.
    User { user: String },
}

/// A hidden-state matrix: one row per hidden unit, one column per step.
#[derive(Debug, Clone)]
pub struct StateMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major activations.
    pub values: Vec<f64>,
    pub col_labels: Vec<String>,
}

impl StateMatrix {
    fn from_columns(columns: Vec<(String, Vector)>, hidden_dim: usize) -> StateMatrix {
        let cols = columns.len();
        let mut values = vec![0.0; hidden_dim * cols];
        let mut col_labels = Vec::with_capacity(cols);
        for (j, (label, v)) in columns.into_iter().enumerate() {
            col_labels.push(label);
            for i in 0..hidden_dim {
                values[i * cols + j] = v[i];
            }
        }
        StateMatrix { rows: hidden_dim, cols, values, col_labels }
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "unit,{}", self.col_labels.join(","))?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{}", self.values[i * self.cols + j]))
                .collect();
            writeln!(out, "u{i},{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Replays one user through the model and captures hidden states.
///
/// For a session trace, the user's earlier sessions are replayed first so
/// hierarchical kinds enter the target session with the right initial state;
/// the matrix then holds the session-level state after each query. For a
/// user trace, the matrix holds the user-level state after each session.
pub fn export_states(
    model: &Model,
    histories: &[UserHistory],
    target: &TraceTarget,
) -> Result<StateMatrix> {
    let user_id = match target {
        TraceTarget::Session { user, .. } | TraceTarget::User { user } => user.as_str(),
    };
    let history = histories
        .iter()
        .find(|h| h.user_id == user_id)
        .ok_or_else(|| Error::UnknownTraceTarget(format!("user {user_id}")))?;

    if matches!(target, TraceTarget::User { .. }) && model.config.kind == ModelKind::Nqs {
        return Err(Error::Config("session-only model has no user-level states".into()));
    }

    let mut state = model.new_state(false);
    let mut columns = Vec::new();
    let mut found = false;
    for session in &history.sessions {
        let tracing_session =
            matches!(target, TraceTarget::Session { index, .. } if *index == session.index);
        for (pos, &token) in session.tokens.iter().enumerate() {
            model.observe(&mut state, token)?;
            if tracing_session {
                columns.push((format!("q{}", pos + 1), state.h.clone()));
            }
        }
        if tracing_session {
            found = true;
            break; // session-level trace ends with its session
        }
        model.end_session(&mut state, None)?;
        if matches!(target, TraceTarget::User { .. }) {
            columns.push((format!("s{}", session.index), state.user_hidden.clone()));
        }
    }

    if let TraceTarget::Session { index, .. } = target {
        if !found {
            return Err(Error::UnknownTraceTarget(format!("user {user_id} session {index}")));
        }
    }
    Ok(StateMatrix::from_columns(columns, model.config.hidden_dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelConfig, ModelParams};
    use crate::querylog::Session;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point(prefix_len: usize, rank: Option<usize>) -> PredictionPoint {
        PredictionPoint {
            user_id: "u".into(),
            session_index: 0,
            prefix_len,
            session_len: prefix_len + 1,
            target: 0,
            rank,
        }
    }

    #[test]
    fn perfect_ranks_give_unit_metrics() {
        let points: Vec<_> = (1..=4).map(|p| point(p, Some(1))).collect();
        let report = report_from_points(&points, 10, BucketBy::Context);
        assert_eq!(report.overall.mrr, 1.0);
        assert_eq!(report.overall.recall, 1.0);
    }

    #[test]
    fn hand_computed_mrr() {
        // Ranks 1, 2, 4: MRR@10 = (1 + 1/2 + 1/4) / 3.
        let points = vec![point(1, Some(1)), point(1, Some(2)), point(1, Some(4))];
        let report = report_from_points(&points, 10, BucketBy::Context);
        assert!((report.overall.mrr - 0.5833333333333334).abs() < 1e-12);
        assert_eq!(report.overall.recall, 1.0);
    }

    #[test]
    fn rank_beyond_cutoff_scores_zero() {
        let points = vec![point(1, Some(11)), point(1, None)];
        let report = report_from_points(&points, 10, BucketBy::Context);
        assert_eq!(report.overall.mrr, 0.0);
        assert_eq!(report.overall.recall, 0.0);
    }

    #[test]
    fn bucket_boundaries() {
        // Context length = prefix + 1: 2 -> short, 3 and 4 -> medium,
        // 5 and beyond -> long.
        assert_eq!(Bucket::of_context(2), Bucket::Short);
        assert_eq!(Bucket::of_context(3), Bucket::Medium);
        assert_eq!(Bucket::of_context(4), Bucket::Medium);
        assert_eq!(Bucket::of_context(5), Bucket::Long);
        assert_eq!(Bucket::of_context(7), Bucket::Long);
    }

    #[test]
    fn bucket_populations_sum_to_total() {
        let points: Vec<_> =
            (1..=9).map(|p| point(p, if p % 2 == 0 { Some(p) } else { None })).collect();
        let report = report_from_points(&points, 10, BucketBy::Context);
        assert_eq!(
            report.short.points + report.medium.points + report.long.points,
            report.overall.points
        );
    }

    #[test]
    fn mrr_never_exceeds_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        use rand::Rng;
        for _ in 0..50 {
            let points: Vec<_> = (0..rng.gen_range(1..30))
                .map(|_| {
                    let rank =
                        if rng.gen_bool(0.2) { None } else { Some(rng.gen_range(1..20)) };
                    point(rng.gen_range(1..8), rank)
                })
                .collect();
            let report = report_from_points(&points, 10, BucketBy::Context);
            for row in [report.overall, report.short, report.medium, report.long] {
                assert!(row.mrr <= row.recall + 1e-15);
            }
        }
    }

    fn tiny_corpus() -> (Vec<UserHistory>, Vec<UserHistory>) {
        let session = |user: &str, index: u32, tokens: Vec<u32>| Session {
            user_id: user.into(),
            index,
            timestamps: (0..tokens.len() as i64).collect(),
            tokens,
        };
        let train = vec![UserHistory {
            user_id: "u".into(),
            sessions: vec![session("u", 0, vec![0, 1, 0, 1])],
        }];
        let test = vec![UserHistory {
            user_id: "u".into(),
            sessions: vec![session("u", 1, vec![0, 1, 2])],
        }];
        (train, test)
    }

    #[test]
    fn adj_scorer_matches_hand_ranks() {
        let (train, test) = tiny_corpus();
        let index = AdjacencyIndex::build(&train);
        let mut scorer = AdjScorer::new(&index);
        let points = evaluate(&mut scorer, &train, &test, 10).unwrap();
        // Test session [0 1 2]: after prefix [0] the target 1 is the only
        // successor of 0 (rank 1); after [0 1] the target 2 was never seen
        // after 1 in training (1 -> 0 only), so it is unranked.
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].rank, Some(1));
        assert_eq!(points[1].rank, None);
    }

    #[test]
    fn empty_test_split_is_an_error() {
        let (train, _) = tiny_corpus();
        let index = AdjacencyIndex::build(&train);
        let mut scorer = AdjScorer::new(&index);
        let err = evaluate(&mut scorer, &train, &[], 10).unwrap_err();
        assert!(matches!(err, Error::EmptyTestSplit));
    }

    #[test]
    fn export_session_states_match_replay() {
        let config = ModelConfig::new(crate::models::ModelKind::Hnqs, 5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Model::new(config.clone(), ModelParams::init(&config, &mut rng).unwrap());
        let histories = vec![UserHistory {
            user_id: "u".into(),
            sessions: vec![
                Session { user_id: "u".into(), index: 0, tokens: vec![1, 2], timestamps: vec![0, 1] },
                Session {
                    user_id: "u".into(),
                    index: 1,
                    tokens: vec![3, 0, 2],
                    timestamps: vec![10, 11, 12],
                },
            ],
        }];
        let matrix = export_states(
            &model,
            &histories,
            &TraceTarget::Session { user: "u".into(), index: 1 },
        )
        .unwrap();
        assert_eq!((matrix.rows, matrix.cols), (4, 3));

        // Replay by hand and compare the last column.
        let mut state = model.new_state(false);
        for &t in &[1u32, 2] {
            model.observe(&mut state, t).unwrap();
        }
        model.end_session(&mut state, None).unwrap();
        for &t in &[3u32, 0, 2] {
            model.observe(&mut state, t).unwrap();
        }
        for i in 0..4 {
            assert_eq!(matrix.values[i * 3 + 2], state.h[i]);
        }
    }

    #[test]
    fn export_user_states_shape() {
        let config = ModelConfig::new(crate::models::ModelKind::Ahnqs, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Model::new(config.clone(), ModelParams::init(&config, &mut rng).unwrap());
        let histories = vec![UserHistory {
            user_id: "u".into(),
            sessions: vec![
                Session { user_id: "u".into(), index: 0, tokens: vec![1, 2], timestamps: vec![0, 1] },
                Session { user_id: "u".into(), index: 1, tokens: vec![3, 0], timestamps: vec![9, 10] },
            ],
        }];
        let matrix =
            export_states(&model, &histories, &TraceTarget::User { user: "u".into() }).unwrap();
        assert_eq!((matrix.rows, matrix.cols), (3, 2));
    }

    #[test]
    fn zero_model_exports_zero_matrix() {
        let config = ModelConfig::new(crate::models::ModelKind::Nqs, 5, 3);
        let model = Model::new(config.clone(), ModelParams::zeros(&config).unwrap());
        let histories = vec![UserHistory {
            user_id: "u".into(),
            sessions: vec![Session {
                user_id: "u".into(),
                index: 0,
                tokens: vec![1, 2, 3],
                timestamps: vec![0, 1, 2],
            }],
        }];
        let matrix = export_states(
            &model,
            &histories,
            &TraceTarget::Session { user: "u".into(), index: 0 },
        )
        .unwrap();
        assert!(matrix.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_target_errors() {
        let config = ModelConfig::new(crate::models::ModelKind::Nqs, 5, 3);
        let model = Model::new(config.clone(), ModelParams::zeros(&config).unwrap());
        let err = export_states(
            &model,
            &[],
            &TraceTarget::Session { user: "ghost".into(), index: 0 },
        )
        .unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }
}
