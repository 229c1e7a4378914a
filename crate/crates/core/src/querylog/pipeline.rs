//! Sessionization, corpus filtering, time-based splitting and statistics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::parse::RawRecord;
use super::{TextHistory, TextSession, UserHistory};

/// Groups records into per-user sessions.
///
/// Records are ordered by (user, timestamp) first; a new session starts
/// whenever the gap to the previous query strictly exceeds `gap_secs`.
/// With `collapse_repeats`, a query identical to the immediately preceding
/// one in the same session is dropped (the first occurrence and its
/// timestamp are kept).
pub fn sessionize(mut records: Vec<RawRecord>, gap_secs: i64, collapse_repeats: bool) -> Vec<TextHistory> {
    records.sort_by(|a, b| a.user_id.cmp(&b.user_id).then(a.timestamp.cmp(&b.timestamp)));

    let mut histories: Vec<TextHistory> = Vec::new();
    for record in records {
        let start_new_user = histories.last().map(|h| h.user_id != record.user_id).unwrap_or(true);
        if start_new_user {
            histories.push(TextHistory { user_id: record.user_id.clone(), sessions: Vec::new() });
        }
        let history = histories.last_mut().unwrap();

        let start_new_session = match history.sessions.last() {
            None => true,
            Some(s) => record.timestamp - s.timestamps.last().unwrap() > gap_secs,
        };
        if start_new_session {
            let index = history.sessions.len() as u32;
            history.sessions.push(TextSession {
                user_id: history.user_id.clone(),
                index,
                queries: vec![record.query],
                timestamps: vec![record.timestamp],
            });
        } else {
            let session = history.sessions.last_mut().unwrap();
            if collapse_repeats && session.queries.last() == Some(&record.query) {
                continue;
            }
            session.queries.push(record.query);
            session.timestamps.push(record.timestamp);
        }
    }
    histories
}

/// Applies the three corpus thresholds, iterating to a fixed point:
/// (1) drop queries occurring fewer than `min_query_count` times corpus-wide,
/// (2) drop sessions left shorter than `min_session_len`,
/// (3) drop users left with fewer than `min_user_sessions` sessions.
///
/// Dropping sessions and users lowers query counts, so the rules are
/// re-applied until nothing changes. Removing a query from the middle of a
/// session keeps the session's remaining order (gaps between survivors may
/// exceed the session gap; sessions are never re-split here).
pub fn filter_corpus(
    mut histories: Vec<TextHistory>,
    min_query_count: u64,
    min_session_len: usize,
    min_user_sessions: usize,
) -> Result<Vec<TextHistory>> {
    loop {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for h in &histories {
            for s in &h.sessions {
                for q in &s.queries {
                    *counts.entry(q.as_str()).or_insert(0) += 1;
                }
            }
        }
        let keep: HashSet<String> = counts
            .iter()
            .filter(|(_, &c)| c >= min_query_count)
            .map(|(q, _)| q.to_string())
            .collect();

        let mut changed = false;
        for h in &mut histories {
            for s in &mut h.sessions {
                let before = s.queries.len();
                let mut queries = Vec::with_capacity(before);
                let mut timestamps = Vec::with_capacity(before);
                for (q, &t) in s.queries.iter().zip(&s.timestamps) {
                    if keep.contains(q) {
                        queries.push(q.clone());
                        timestamps.push(t);
                    }
                }
                if queries.len() != before {
                    changed = true;
                    s.queries = queries;
                    s.timestamps = timestamps;
                }
            }
            let before = h.sessions.len();
            h.sessions.retain(|s| s.queries.len() >= min_session_len);
            changed |= h.sessions.len() != before;
        }
        let before = histories.len();
        histories.retain(|h| h.sessions.len() >= min_user_sessions);
        changed |= histories.len() != before;

        if !changed {
            break;
        }
    }

    if histories.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(histories)
}

/// Latest timestamp anywhere in the corpus.
pub fn latest_timestamp(histories: &[TextHistory]) -> Option<i64> {
    histories
        .iter()
        .flat_map(|h| h.sessions.iter())
        .flat_map(|s| s.timestamps.iter().copied())
        .max()
}

/// Splits off the sessions of the final `window_days` as a held-out set.
///
/// A session belongs to the held-out side when its start lies at or after
/// the cutoff (latest corpus timestamp minus the window). Held-out queries
/// absent from the remaining training side are removed, and held-out
/// sessions left with fewer than two queries are dropped.
pub fn split_by_time(
    histories: Vec<TextHistory>,
    window_days: i64,
) -> (Vec<TextHistory>, Vec<TextHistory>) {
    match latest_timestamp(&histories) {
        Some(latest) => split_at_cutoff(histories, latest - window_days * 86_400),
        None => (histories, Vec::new()),
    }
}

/// As [`split_by_time`], but with an explicit cutoff instant.
pub fn split_at_cutoff(
    histories: Vec<TextHistory>,
    cutoff: i64,
) -> (Vec<TextHistory>, Vec<TextHistory>) {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for h in histories {
        let mut train_sessions = Vec::new();
        let mut held_sessions = Vec::new();
        for s in h.sessions {
            if s.start_ts() >= cutoff {
                held_sessions.push(s);
            } else {
                train_sessions.push(s);
            }
        }
        if !train_sessions.is_empty() {
            train.push(TextHistory { user_id: h.user_id.clone(), sessions: train_sessions });
        }
        if !held_sessions.is_empty() {
            held.push(TextHistory { user_id: h.user_id, sessions: held_sessions });
        }
    }
    let held = prune_against_train(&train, held);
    (train, held)
}

/// Removes held-out queries that never occur on the training side, dropping
/// sessions that shrink below two queries.
pub fn prune_against_train(
    train: &[TextHistory],
    held: Vec<TextHistory>,
) -> Vec<TextHistory> {
    let train_vocab: HashSet<&str> = train
        .iter()
        .flat_map(|h| h.sessions.iter())
        .flat_map(|s| s.queries.iter())
        .map(String::as_str)
        .collect();

    let mut out = Vec::new();
    for mut h in held {
        for s in &mut h.sessions {
            let mut queries = Vec::with_capacity(s.queries.len());
            let mut timestamps = Vec::with_capacity(s.timestamps.len());
            for (q, &t) in s.queries.iter().zip(&s.timestamps) {
                if train_vocab.contains(q.as_str()) {
                    queries.push(q.clone());
                    timestamps.push(t);
                }
            }
            s.queries = queries;
            s.timestamps = timestamps;
        }
        h.sessions.retain(|s| s.queries.len() >= 2);
        if !h.sessions.is_empty() {
            out.push(h);
        }
    }
    out
}

/// The six per-split statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub queries: u64,
    pub unique_queries: u64,
    pub sessions: u64,
    pub users: u64,
    pub avg_queries_per_session: f64,
    pub avg_sessions_per_user: f64,
}

/// Statistics for the three splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub train: SplitStats,
    pub valid: SplitStats,
    pub test: SplitStats,
}

/// Statistics of one tokenized split.
pub fn split_stats(histories: &[UserHistory]) -> SplitStats {
    let mut queries = 0u64;
    let mut sessions = 0u64;
    let mut unique = HashSet::new();
    for h in histories {
        sessions += h.sessions.len() as u64;
        for s in &h.sessions {
            queries += s.tokens.len() as u64;
            unique.extend(s.tokens.iter().copied());
        }
    }
    let users = histories.len() as u64;
    SplitStats {
        queries,
        unique_queries: unique.len() as u64,
        sessions,
        users,
        avg_queries_per_session: if sessions > 0 { queries as f64 / sessions as f64 } else { 0.0 },
        avg_sessions_per_user: if users > 0 { sessions as f64 / users as f64 } else { 0.0 },
    }
}

pub fn compute_stats(
    train: &[UserHistory],
    valid: &[UserHistory],
    test: &[UserHistory],
) -> CorpusStats {
    CorpusStats {
        train: split_stats(train),
        valid: split_stats(valid),
        test: split_stats(test),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(user: &str, query: &str, ts: i64) -> RawRecord {
        RawRecord {
            user_id: user.into(),
            query: query.into(),
            timestamp: ts,
            click_rank: None,
            click_url: None,
        }
    }

    #[test]
    fn gap_under_thirty_minutes_keeps_one_session() {
        let records = vec![record("u", "a", 0), record("u", "b", 29 * 60)];
        let histories = sessionize(records, 1800, true);
        assert_eq!(histories[0].sessions.len(), 1);
        assert_eq!(histories[0].sessions[0].queries, vec!["a", "b"]);
    }

    #[test]
    fn gap_over_thirty_minutes_starts_new_session() {
        let records = vec![record("u", "a", 0), record("u", "b", 31 * 60)];
        let histories = sessionize(records, 1800, true);
        assert_eq!(histories[0].sessions.len(), 2);
    }

    #[test]
    fn gap_of_exactly_the_threshold_stays_in_session() {
        // The rule is strict: only a gap strictly greater than the threshold
        // starts a new session.
        let records = vec![record("u", "a", 0), record("u", "b", 1800)];
        let histories = sessionize(records, 1800, true);
        assert_eq!(histories[0].sessions.len(), 1);
    }

    #[test]
    fn single_query_yields_single_session() {
        let histories = sessionize(vec![record("u", "a", 0)], 1800, true);
        assert_eq!(histories[0].sessions.len(), 1);
        assert_eq!(histories[0].sessions[0].queries.len(), 1);
    }

    #[test]
    fn consecutive_duplicates_collapse() {
        let records = vec![record("u", "a", 0), record("u", "a", 60), record("u", "b", 120)];
        let histories = sessionize(records, 1800, true);
        assert_eq!(histories[0].sessions[0].queries, vec!["a", "b"]);
        assert_eq!(histories[0].sessions[0].timestamps, vec![0, 120]);
    }

    #[test]
    fn duplicate_collapse_is_per_session() {
        // Same query across a session boundary is not a repeat.
        let records = vec![record("u", "a", 0), record("u", "a", 4000)];
        let histories = sessionize(records, 1800, true);
        assert_eq!(histories[0].sessions.len(), 2);
    }

    #[test]
    fn sessionize_is_idempotent() {
        // Re-sessionizing the flattened output with the same gap reproduces
        // the same sessions.
        let records = vec![
            record("u", "a", 0),
            record("u", "b", 100),
            record("u", "c", 4000),
            record("v", "a", 50),
        ];
        let first = sessionize(records, 1800, true);
        let flattened: Vec<RawRecord> = first
            .iter()
            .flat_map(|h| h.sessions.iter())
            .flat_map(|s| {
                s.queries.iter().zip(&s.timestamps).map(|(q, &t)| record(&s.user_id, q, t))
            })
            .collect();
        let second = sessionize(flattened, 1800, true);
        assert_eq!(first, second);
    }

    fn history_of(user: &str, sessions: Vec<Vec<&str>>) -> TextHistory {
        let mut ts = 0i64;
        let sessions = sessions
            .into_iter()
            .enumerate()
            .map(|(i, queries)| {
                let timestamps: Vec<i64> = queries
                    .iter()
                    .map(|_| {
                        ts += 60;
                        ts
                    })
                    .collect();
                ts += 10_000; // force a gap between sessions
                TextSession {
                    user_id: user.into(),
                    index: i as u32,
                    queries: queries.into_iter().map(String::from).collect(),
                    timestamps,
                }
            })
            .collect();
        TextHistory { user_id: user.into(), sessions }
    }

    #[test]
    fn rare_query_removed_at_threshold() {
        // "x" occurs once, below the threshold of 2; all other queries occur
        // twice or more and survive.
        let histories = vec![
            history_of("u", vec![vec!["a", "x", "b"], vec!["a", "b"]]),
        ];
        let out = filter_corpus(histories, 2, 2, 1).unwrap();
        assert_eq!(out[0].sessions[0].queries, vec!["a", "b"]);
        assert_eq!(out[0].sessions.len(), 2);
    }

    #[test]
    fn thresholds_of_one_change_nothing() {
        let histories = vec![history_of("u", vec![vec!["a", "b"], vec!["c"]])];
        let out = filter_corpus(histories.clone(), 1, 1, 1).unwrap();
        assert_eq!(out, histories);
    }

    #[test]
    fn three_user_fixture_fixed_point() {
        // Hand application of the rules with min_query_count=2,
        // min_session_len=2, min_user_sessions=2:
        //   u1: [a b] [a c]      -> c is unique corpus-wide at first pass?
        //   u2: [b d] [d e]
        //   u3: [e f]
        // Counts: a2 b2 c1 d2 e2 f1 -> drop c, f.
        //   u1: [a b] [a]   -> second session dies -> u1 has 1 session -> u1 dropped
        //   u2: [b d] [d e] -> both live
        //   u3: [e]         -> session dies -> u3 dropped
        // Recount over survivors (u2 only): b1 d2 e1 -> drop b, e.
        //   u2: [d] [d] -> both sessions die -> u2 dropped -> empty corpus.
        let histories = vec![
            history_of("u1", vec![vec!["a", "b"], vec!["a", "c"]]),
            history_of("u2", vec![vec!["b", "d"], vec!["d", "e"]]),
            history_of("u3", vec![vec!["e", "f"]]),
        ];
        let err = filter_corpus(histories, 2, 2, 2).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));

        // Same fixture with min_user_sessions=1: u1 keeps [a b], u2 keeps
        // both sessions, u3 dies; recount a1 b2 d2 e1 -> drop a, e ->
        // u1 [b] dies -> u1 dropped; u2 [b d] [d] -> [d] dies -> u2 has [b d].
        // Recount b1 d1 -> drop both -> empty. Still empty, but through a
        // different path; verify with a fixture that stabilizes instead.
        let histories = vec![
            history_of("u1", vec![vec!["a", "b"], vec!["a", "b"]]),
            history_of("u2", vec![vec!["a", "b", "c"]]),
        ];
        let out = filter_corpus(histories, 2, 2, 1).unwrap();
        // c occurs once -> dropped; everything else stable.
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].sessions[0].queries, vec!["a", "b"]);
    }

    #[test]
    fn fixed_point_respects_all_thresholds() {
        let histories = vec![
            history_of("u1", vec![vec!["a", "b", "a"], vec!["b", "a", "b"], vec!["a", "b"]]),
            history_of("u2", vec![vec!["a", "b"], vec!["b", "a"]]),
        ];
        let out = filter_corpus(histories, 3, 2, 2).unwrap();
        let mut counts: HashMap<String, u64> = HashMap::new();
        for h in &out {
            assert!(h.sessions.len() >= 2);
            for s in &h.sessions {
                assert!(s.queries.len() >= 2);
                for q in &s.queries {
                    *counts.entry(q.clone()).or_insert(0) += 1;
                }
            }
        }
        for (_, c) in counts {
            assert!(c >= 3);
        }
    }

    #[test]
    fn split_assigns_boundary_session_to_test() {
        let mut h = history_of("u", vec![vec!["a", "b"], vec!["a", "b"]]);
        // Pin timestamps: latest is 100 days; cutoff = 70 days.
        let day = 86_400;
        h.sessions[0].timestamps = vec![10 * day, 10 * day + 60];
        h.sessions[1].timestamps = vec![70 * day, 100 * day];
        let (train, test) = split_by_time(vec![h], 30);
        // Session 1 starts exactly at the cutoff instant -> test.
        assert_eq!(train[0].sessions.len(), 1);
        assert_eq!(test[0].sessions.len(), 1);
        assert_eq!(test[0].sessions[0].index, 1);
    }

    #[test]
    fn all_sessions_older_than_cutoff_means_empty_test() {
        let mut h = history_of("u", vec![vec!["a", "b"], vec!["b", "a"]]);
        let day = 86_400;
        h.sessions[0].timestamps = vec![0, 60];
        h.sessions[1].timestamps = vec![day, day + 60];
        let (train, test) = split_at_cutoff(vec![h], 100 * day);
        assert_eq!(train[0].sessions.len(), 2);
        assert!(test.is_empty());
    }

    #[test]
    fn out_of_vocabulary_test_query_removed() {
        let day = 86_400;
        let mut train_s = history_of("u", vec![vec!["a", "b", "a"]]);
        train_s.sessions[0].timestamps = vec![0, 60, 120];
        let mut test_s = history_of("v", vec![vec!["a", "zzz", "b"]]);
        test_s.sessions[0].timestamps = vec![40 * day, 40 * day + 60, 40 * day + 120];
        let (train, test) = split_by_time(vec![train_s, test_s], 30);
        assert_eq!(train.len(), 1);
        assert_eq!(test[0].sessions[0].queries, vec!["a", "b"]);
    }

    #[test]
    fn test_sessions_shrunk_below_two_are_dropped() {
        let day = 86_400;
        let mut train_s = history_of("u", vec![vec!["a", "b", "a"]]);
        train_s.sessions[0].timestamps = vec![0, 60, 120];
        let mut test_s = history_of("v", vec![vec!["zzz", "b"]]);
        test_s.sessions[0].timestamps = vec![40 * day, 40 * day + 60];
        let (_, test) = split_by_time(vec![train_s, test_s], 30);
        assert!(test.is_empty());
    }

    #[test]
    fn split_partitions_sessions() {
        let day = 86_400;
        let mut h = history_of("u", vec![vec!["a", "b"], vec!["b", "a"], vec!["a", "b"]]);
        h.sessions[0].timestamps = vec![0, 60];
        h.sessions[1].timestamps = vec![5 * day, 5 * day + 60];
        h.sessions[2].timestamps = vec![40 * day, 40 * day + 60];
        let (train, test) = split_by_time(vec![h], 30);
        let train_ids: Vec<u32> = train[0].sessions.iter().map(|s| s.index).collect();
        let test_ids: Vec<u32> = test[0].sessions.iter().map(|s| s.index).collect();
        assert_eq!(train_ids, vec![0, 1]);
        assert_eq!(test_ids, vec![2]);
    }

    #[test]
    fn stats_for_tiny_split() {
        use super::super::Session;
        let histories = vec![UserHistory {
            user_id: "u".into(),
            sessions: vec![Session {
                user_id: "u".into(),
                index: 0,
                tokens: vec![0, 1],
                timestamps: vec![0, 60],
            }],
        }];
        let s = split_stats(&histories);
        assert_eq!(s.queries, 2);
        assert_eq!(s.unique_queries, 2);
        assert_eq!(s.sessions, 1);
        assert_eq!(s.users, 1);
        assert_eq!(s.avg_queries_per_session, 2.0);
        assert_eq!(s.avg_sessions_per_user, 1.0);
    }
}
