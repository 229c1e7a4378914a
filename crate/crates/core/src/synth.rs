//! Synthetic corpora with a controllable personalization signal.
//!
//! The generated task separates models that can use a user's past sessions
//! from models that cannot. Each user carries a latent preference group g.
//! Their sessions alternate between two shapes:
//!
//! * revealer sessions mix the group's revealer token R_g into a stretch of
//!   filler queries and end on fillers, so a session summary has to pick
//!   the revealing states out of the noise;
//! * ambiguous sessions open with a shared trigger token A whose successor
//!   is the group's token S_g, followed by fillers.
//!
//! Within an ambiguous session the prefix before the S_g prediction is just
//! [A], identical across groups: the successor is unrecoverable from the
//! session alone. A held-out ambiguous session per user forms the test
//! split, so the prefix-length-1 test points are exactly the personalized
//! predictions, while deeper points (the filler chain) are equally
//! available to every model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::querylog::{Session, UserHistory};

#[derive(Debug, Clone)]
pub struct PersonalizationSpec {
    pub groups: usize,
    pub users_per_group: usize,
    /// Training sessions per user, alternating revealer/ambiguous starting
    /// with a revealer. One extra ambiguous session per user is generated as
    /// the test split.
    pub train_sessions_per_user: usize,
    /// Number of filler tokens; they chain deterministically C_i -> C_{i+1}
    /// from a random, group-independent start.
    pub fillers: usize,
    pub seed: u64,
}

impl Default for PersonalizationSpec {
    fn default() -> Self {
        PersonalizationSpec {
            groups: 20,
            users_per_group: 10,
            train_sessions_per_user: 8,
            fillers: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PersonalizationCorpus {
    pub train: Vec<UserHistory>,
    pub test: Vec<UserHistory>,
    pub vocab_size: usize,
    /// The shared trigger token A.
    pub ambiguous_token: u32,
    /// S_g per group, for inspection.
    pub group_successors: Vec<u32>,
}

impl PersonalizationSpec {
    fn filler(&self, i: usize) -> u32 {
        (i % self.fillers) as u32
    }

    fn revealer(&self, group: usize) -> u32 {
        (self.fillers + group) as u32
    }

    fn successor(&self, group: usize) -> u32 {
        (self.fillers + self.groups + group) as u32
    }

    fn ambiguous(&self) -> u32 {
        (self.fillers + 2 * self.groups) as u32
    }

    pub fn vocab_size(&self) -> usize {
        self.fillers + 2 * self.groups + 1
    }
}

pub fn personalization_corpus(spec: &PersonalizationSpec) -> PersonalizationCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let users = spec.groups * spec.users_per_group;

    let mut train = Vec::with_capacity(users);
    let mut test = Vec::with_capacity(users);
    for user_index in 0..users {
        let group = user_index % spec.groups;
        let user_id = format!("u{user_index:04}");

        let mut sessions = Vec::with_capacity(spec.train_sessions_per_user);
        for s in 0..spec.train_sessions_per_user {
            let tokens = if s % 2 == 0 {
                revealer_session(spec, group, &mut rng)
            } else {
                ambiguous_session(spec, group, &mut rng)
            };
            sessions.push(make_session(&user_id, s as u32, tokens));
        }
        train.push(UserHistory { user_id: user_id.clone(), sessions });

        let test_tokens = ambiguous_session(spec, group, &mut rng);
        test.push(UserHistory {
            user_id: user_id.clone(),
            sessions: vec![make_session(
                &user_id,
                spec.train_sessions_per_user as u32,
                test_tokens,
            )],
        });
    }

    PersonalizationCorpus {
        train,
        test,
        vocab_size: spec.vocab_size(),
        ambiguous_token: spec.ambiguous(),
        group_successors: (0..spec.groups).map(|g| spec.successor(g)).collect(),
    }
}

fn revealer_session<R: Rng>(spec: &PersonalizationSpec, group: usize, rng: &mut R) -> Vec<u32> {
    // The revealing token appears once, early, and the session then runs
    // four steps down the filler chain: a summary built from the final
    // state alone has to carry the group signal across the whole tail,
    // while a summary that can weigh earlier states reads it directly.
    let x = rng.gen_range(0..spec.fillers);
    let b = rng.gen_range(0..spec.fillers);
    vec![
        spec.filler(x),
        spec.revealer(group),
        spec.filler(b),
        spec.filler(b + 1),
        spec.filler(b + 2),
        spec.filler(b + 3),
    ]
}

fn ambiguous_session<R: Rng>(spec: &PersonalizationSpec, group: usize, rng: &mut R) -> Vec<u32> {
    // Only the trigger's successor is user-dependent; the filler chain that
    // follows starts at a random, group-independent slot.
    let f = rng.gen_range(0..spec.fillers);
    vec![
        spec.ambiguous(),
        spec.successor(group),
        spec.filler(f),
        spec.filler(f + 1),
        spec.filler(f + 2),
        spec.filler(f + 3),
    ]
}

fn make_session(user_id: &str, index: u32, tokens: Vec<u32>) -> Session {
    let base = index as i64 * 10_000;
    Session {
        user_id: user_id.into(),
        index,
        timestamps: (0..tokens.len() as i64).map(|q| base + q * 60).collect(),
        tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape() {
        let spec = PersonalizationSpec::default();
        let corpus = personalization_corpus(&spec);
        assert_eq!(corpus.train.len(), 200);
        assert_eq!(corpus.test.len(), 200);
        assert_eq!(corpus.vocab_size, 61);
        for user in &corpus.train {
            assert_eq!(user.sessions.len(), 8);
            for s in &user.sessions {
                assert_eq!(s.tokens.len(), 6);
                assert!(s.tokens.iter().all(|&t| (t as usize) < corpus.vocab_size));
            }
        }
        for user in &corpus.test {
            assert_eq!(user.sessions.len(), 1);
            assert_eq!(user.sessions[0].tokens[0], corpus.ambiguous_token);
        }
    }

    #[test]
    fn ambiguous_successor_is_group_determined() {
        let spec = PersonalizationSpec::default();
        let corpus = personalization_corpus(&spec);
        for (idx, user) in corpus.test.iter().enumerate() {
            let group = idx % spec.groups;
            assert_eq!(user.sessions[0].tokens[1], corpus.group_successors[group]);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = PersonalizationSpec { seed: 33, ..Default::default() };
        let a = personalization_corpus(&spec);
        let b = personalization_corpus(&spec);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn filler_chain_is_deterministic() {
        // Filler-to-filler transitions always follow the cycle, for every
        // user and session shape, so fillers carry no user signal.
        let spec = PersonalizationSpec::default();
        let corpus = personalization_corpus(&spec);
        let fillers = spec.fillers as u32;
        for h in corpus.train.iter().chain(&corpus.test) {
            for s in &h.sessions {
                for w in s.tokens.windows(2) {
                    if w[0] < fillers && w[1] < fillers {
                        assert_eq!(w[1], (w[0] + 1) % fillers);
                    }
                }
            }
        }
    }

    #[test]
    fn prefix_before_successor_carries_no_group_signal() {
        // The only token before the personalized target is the shared
        // trigger, identical for every user.
        let corpus = personalization_corpus(&PersonalizationSpec::default());
        for user in &corpus.test {
            assert_eq!(user.sessions[0].tokens[0], corpus.ambiguous_token);
        }
    }
}
