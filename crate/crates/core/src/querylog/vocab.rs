//! Vocabulary over retained query strings.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{Session, TextHistory, UserHistory};

/// Bijective mapping between normalized query strings and dense ids in
/// `[0, V)`. Ids are assigned by descending training-split count, ties by
/// ascending text, so the mapping is a deterministic function of the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    /// Builds the vocabulary from the training split.
    pub fn build(train: &[TextHistory]) -> Vocabulary {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for h in train {
            for s in &h.sessions {
                for q in &s.queries {
                    *counts.entry(q.as_str()).or_insert(0) += 1;
                }
            }
        }
        let mut entries: Vec<(&str, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut token_to_id = HashMap::with_capacity(entries.len());
        let mut id_to_token = Vec::with_capacity(entries.len());
        let mut count_list = Vec::with_capacity(entries.len());
        for (i, (token, count)) in entries.into_iter().enumerate() {
            token_to_id.insert(token.to_string(), i as u32);
            id_to_token.push(token.to_string());
            count_list.push(count);
        }
        Vocabulary { token_to_id, id_to_token, counts: count_list }
    }

    pub fn from_parts(id_to_token: Vec<String>, counts: Vec<u64>) -> Vocabulary {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { token_to_id, id_to_token, counts }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    /// Maps text histories onto token histories. Every query must be in the
    /// vocabulary; splits are pruned against the training side before this
    /// runs, so a miss indicates a pipeline bug or a foreign corpus.
    pub fn tokenize(&self, histories: &[TextHistory]) -> Result<Vec<UserHistory>> {
        histories
            .iter()
            .map(|h| {
                let sessions = h
                    .sessions
                    .iter()
                    .map(|s| {
                        let tokens = s
                            .queries
                            .iter()
                            .map(|q| self.id(q).ok_or_else(|| Error::UnknownQuery(q.clone())))
                            .collect::<Result<Vec<u32>>>()?;
                        Ok(Session {
                            user_id: s.user_id.clone(),
                            index: s.index,
                            tokens,
                            timestamps: s.timestamps.clone(),
                        })
                    })
                    .collect::<Result<Vec<Session>>>()?;
                Ok(UserHistory { user_id: h.user_id.clone(), sessions })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::querylog::TextSession;

    fn history(user: &str, queries: Vec<&str>) -> TextHistory {
        TextHistory {
            user_id: user.into(),
            sessions: vec![TextSession {
                user_id: user.into(),
                index: 0,
                queries: queries.iter().map(|q| q.to_string()).collect(),
                timestamps: (0..queries.len() as i64).collect(),
            }],
        }
    }

    #[test]
    fn ids_ordered_by_count_then_text() {
        let train = vec![history("u", vec!["b", "a", "b", "c", "a"])];
        let v = Vocabulary::build(&train);
        // a and b both occur twice: tie broken by text; c occurs once.
        assert_eq!(v.id("a"), Some(0));
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.id("c"), Some(2));
        assert_eq!(v.count(0), 2);
        assert_eq!(v.token(2), Some("c"));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn tokenize_round_trips_ids() {
        let train = vec![history("u", vec!["x", "y", "x"])];
        let v = Vocabulary::build(&train);
        let tokenized = v.tokenize(&train).unwrap();
        let tokens = &tokenized[0].sessions[0].tokens;
        assert_eq!(tokens.len(), 3);
        assert_eq!(tokens[0], tokens[2]);
        for &t in tokens {
            assert!((t as usize) < v.len());
        }
    }

    #[test]
    fn unknown_query_is_an_error() {
        let train = vec![history("u", vec!["x"])];
        let v = Vocabulary::build(&train);
        let err = v.tokenize(&[history("u", vec!["zzz"])]).unwrap_err();
        assert!(err.to_string().contains("zzz"));
    }
}
