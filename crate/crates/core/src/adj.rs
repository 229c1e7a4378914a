//! Co-occurrence baseline: rank candidate next queries by how often they
//! followed the current query in the training sessions.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::querylog::UserHistory;

/// Successor counts per query, successor lists sorted by
/// (count descending, token id ascending).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdjacencyIndex {
    successors: HashMap<u32, Vec<(u32, u32)>>,
}

impl AdjacencyIndex {
    /// Counts every adjacent pair within a session; pairs never cross
    /// session boundaries. Session order does not matter.
    pub fn build(train: &[UserHistory]) -> AdjacencyIndex {
        let mut counts: HashMap<u32, HashMap<u32, u32>> = HashMap::new();
        for history in train {
            for session in &history.sessions {
                for pair in session.tokens.windows(2) {
                    *counts.entry(pair[0]).or_default().entry(pair[1]).or_insert(0) += 1;
                }
            }
        }
        let successors = counts
            .into_iter()
            .map(|(query, succ)| {
                let mut list: Vec<(u32, u32)> = succ.into_iter().collect();
                list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                (query, list)
            })
            .collect();
        AdjacencyIndex { successors }
    }

    /// Top-k successors of `query`; empty when the query was never seen.
    pub fn suggest(&self, query: u32, k: usize) -> Vec<u32> {
        self.successors
            .get(&query)
            .map(|list| list.iter().take(k).map(|(succ, _)| *succ).collect())
            .unwrap_or_default()
    }

    /// 1-based rank of `target` among the successors of `query`, if ranked
    /// at all.
    pub fn rank_of(&self, query: u32, target: u32) -> Option<usize> {
        self.successors
            .get(&query)?
            .iter()
            .position(|(succ, _)| *succ == target)
            .map(|p| p + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.successors.is_empty()
    }

    /// Total count mass, which equals the number of adjacent pairs indexed.
    pub fn total_pairs(&self) -> u64 {
        self.successors
            .values()
            .flat_map(|list| list.iter())
            .map(|(_, c)| *c as u64)
            .sum()
    }

    /// Persists as `query_id<TAB>successor_id<TAB>count`, queries ascending.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let mut queries: Vec<&u32> = self.successors.keys().collect();
        queries.sort();
        for q in queries {
            for (succ, count) in &self.successors[q] {
                writeln!(w, "{q}\t{succ}\t{count}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AdjacencyIndex> {
        let reader = BufReader::new(File::open(path)?);
        let mut successors: HashMap<u32, Vec<(u32, u32)>> = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parse = |i: usize| -> Result<u32> {
                fields
                    .get(i)
                    .and_then(|f| f.parse().ok())
                    .ok_or_else(|| Error::CorpusFile(format!("adjacency line {}", lineno + 1)))
            };
            successors.entry(parse(0)?).or_default().push((parse(1)?, parse(2)?));
        }
        for list in successors.values_mut() {
            list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        Ok(AdjacencyIndex { successors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querylog::Session;

    fn histories(sessions: Vec<Vec<u32>>) -> Vec<UserHistory> {
        vec![UserHistory {
            user_id: "u".into(),
            sessions: sessions
                .into_iter()
                .enumerate()
                .map(|(i, tokens)| Session {
                    user_id: "u".into(),
                    index: i as u32,
                    timestamps: (0..tokens.len() as i64).collect(),
                    tokens,
                })
                .collect(),
        }]
    }

    #[test]
    fn hand_counted_successors() {
        // Sessions [a b], [a b], [a c] with a=0, b=1, c=2: after a, b twice
        // and c once.
        let index = AdjacencyIndex::build(&histories(vec![vec![0, 1], vec![0, 1], vec![0, 2]]));
        assert_eq!(index.suggest(0, 2), vec![1, 2]);
        assert_eq!(index.rank_of(0, 2), Some(2));
        assert_eq!(index.total_pairs(), 3);
    }

    #[test]
    fn empty_corpus_empty_index() {
        let index = AdjacencyIndex::build(&[]);
        assert!(index.is_empty());
        assert_eq!(index.suggest(0, 5), Vec::<u32>::new());
    }

    #[test]
    fn single_query_session_contributes_nothing() {
        let index = AdjacencyIndex::build(&histories(vec![vec![7]]));
        assert!(index.is_empty());
    }

    #[test]
    fn unseen_query_gives_empty_list() {
        let index = AdjacencyIndex::build(&histories(vec![vec![0, 1]]));
        assert_eq!(index.suggest(42, 5), Vec::<u32>::new());
        assert_eq!(index.rank_of(42, 0), None);
    }

    #[test]
    fn ties_break_by_lower_token_id() {
        // After 0: successors 2 and 1, once each.
        let index = AdjacencyIndex::build(&histories(vec![vec![0, 2], vec![0, 1]]));
        assert_eq!(index.suggest(0, 2), vec![1, 2]);
    }

    #[test]
    fn session_order_does_not_matter() {
        let a = AdjacencyIndex::build(&histories(vec![vec![0, 1, 2], vec![2, 0]]));
        let b = AdjacencyIndex::build(&histories(vec![vec![2, 0], vec![0, 1, 2]]));
        assert_eq!(a, b);
    }

    #[test]
    fn no_cross_session_pairs() {
        let index = AdjacencyIndex::build(&histories(vec![vec![0, 1], vec![2, 3]]));
        assert_eq!(index.suggest(1, 5), Vec::<u32>::new());
    }

    #[test]
    fn save_load_round_trip() {
        let index = AdjacencyIndex::build(&histories(vec![vec![0, 1, 2], vec![0, 1], vec![1, 0]]));
        let path =
            std::env::temp_dir().join(format!("ahnqs-adj-{}", std::process::id()));
        index.save(&path).unwrap();
        let loaded = AdjacencyIndex::load(&path).unwrap();
        assert_eq!(index, loaded);
        std::fs::remove_file(&path).ok();
    }
}
