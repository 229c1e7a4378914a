//! Property tests for the library's structural invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use ahnqs::gru::{forward, GruInput, GruParams};
use ahnqs::linalg::{softmax, Vector};
use ahnqs::models::{Model, ModelConfig, ModelKind, ModelParams};
use ahnqs::querylog::{sessionize, RawRecord, Session, UserHistory};
use ahnqs::training::top1_loss;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn softmax_sums_to_one_and_stays_positive(
        values in vec(-350.0f64..350.0, 1..200)
    ) {
        // Entry positivity needs the pairwise spread to stay below the
        // point where exp underflows (~745); spreads up to 700 cover
        // everything the models can produce, since attention scores are
        // bilinear forms of tanh-bounded states.
        let out = softmax(&Vector::from_vec(values)).unwrap();
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(out.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant(
        values in vec(-50.0f64..50.0, 1..30),
        shift in -1000.0f64..1000.0
    ) {
        let base = softmax(&Vector::from_vec(values.clone())).unwrap();
        let shifted = softmax(&Vector::from_vec(
            values.iter().map(|v| v + shift).collect(),
        )).unwrap();
        for (a, b) in base.iter().zip(shifted.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_state_is_convex_combination_with_open_gates(
        seed in 0u64..1000,
        h_prev in vec(-0.99f64..0.99, 1..6),
        x in vec(-2.0f64..2.0, 1..6)
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GruParams::glorot_uniform(h_prev.len(), x.len(), &mut rng);
        let (h, cache) = forward(
            &p,
            &GruInput::Dense(Vector::from_vec(x)),
            &Vector::from_vec(h_prev.clone()),
        ).unwrap();
        for i in 0..h_prev.len() {
            prop_assert!(cache.update[i] > 0.0 && cache.update[i] < 1.0);
            prop_assert!(cache.reset[i] > 0.0 && cache.reset[i] < 1.0);
            prop_assert!(cache.candidate[i] > -1.0 && cache.candidate[i] < 1.0);
            let lo = h_prev[i].min(cache.candidate[i]) - 1e-15;
            let hi = h_prev[i].max(cache.candidate[i]) + 1e-15;
            prop_assert!(h[i] >= lo && h[i] <= hi);
        }
    }

    #[test]
    fn top1_terms_stay_in_bounds(
        pos in -1.0f64..1.0,
        negs in vec(-1.0f64..1.0, 1..8)
    ) {
        let loss = top1_loss(pos, &negs).unwrap();
        prop_assert!(loss > 0.0 && loss < 2.0);
    }

    #[test]
    fn sessionize_is_idempotent(
        raw in vec((0u8..4, 0i64..20_000, 0u8..5), 1..40)
    ) {
        let records: Vec<RawRecord> = raw.iter().map(|&(user, ts, q)| RawRecord {
            user_id: format!("u{user}"),
            query: format!("q{q}"),
            timestamp: ts,
            click_rank: None,
            click_url: None,
        }).collect();
        let first = sessionize(records, 1800, true);
        let flattened: Vec<RawRecord> = first
            .iter()
            .flat_map(|h| h.sessions.iter())
            .flat_map(|s| s.queries.iter().zip(&s.timestamps).map(|(q, &t)| RawRecord {
                user_id: s.user_id.clone(),
                query: q.clone(),
                timestamp: t,
                click_rank: None,
                click_url: None,
            }))
            .collect();
        let second = sessionize(flattened, 1800, true);
        prop_assert_eq!(first, second);
    }
}

/// The session-only model never looks at user identity, so
/// regrouping the same sessions under different users leaves every score
/// unchanged.
#[test]
fn nqs_scores_are_user_permutation_invariant() {
    let config = ModelConfig::new(ModelKind::Nqs, 8, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = Model::new(config.clone(), ModelParams::init(&config, &mut rng).unwrap());

    let sessions: Vec<Vec<u32>> = vec![vec![0, 3, 1], vec![2, 5], vec![7, 6, 4, 0]];
    let score_under = |assignment: &[(usize, &str)]| -> Vec<Vec<f64>> {
        // Walk each session under its assigned user, collecting all scores.
        let mut out = Vec::new();
        let mut histories: std::collections::BTreeMap<&str, Vec<&Vec<u32>>> =
            std::collections::BTreeMap::new();
        for &(session_idx, user) in assignment {
            histories.entry(user).or_default().push(&sessions[session_idx]);
        }
        for (_, user_sessions) in histories {
            let mut state = model.new_state(false);
            for tokens in user_sessions {
                for &t in tokens.iter() {
                    model.observe(&mut state, t).unwrap();
                    out.push(model.score_state(&state).scores.as_slice().to_vec());
                }
                model.end_session(&mut state, None).unwrap();
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    };

    let grouped = score_under(&[(0, "alice"), (1, "alice"), (2, "bob")]);
    let regrouped = score_under(&[(0, "carol"), (1, "dave"), (2, "dave")]);
    assert_eq!(grouped, regrouped);
}

/// Beyond a pairwise spread of roughly 745 the smallest shifted exponential
/// underflows to exactly zero; normalization still holds. This pins the
/// floating-point boundary of the positivity guarantee.
#[test]
fn softmax_underflows_to_zero_only_at_extreme_spreads() {
    let out = softmax(&Vector::from_vec(vec![800.0, 0.0])).unwrap();
    assert_eq!(out[1], 0.0);
    assert_eq!(out[0], 1.0);

    let out = softmax(&Vector::from_vec(vec![700.0, 0.0])).unwrap();
    assert!(out[1] > 0.0);
    let sum: f64 = out.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

/// Softmax stays exactly normalized at vocabulary-scale dimensions.
#[test]
fn softmax_normalized_at_hundred_thousand_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    use rand::Rng;
    let values: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-300.0..300.0)).collect();
    let out = softmax(&Vector::from_vec(values)).unwrap();
    let sum: f64 = out.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

/// After any number of steps and transitions, hidden coordinates stay inside
/// the open unit interval for every model kind.
#[test]
fn hidden_states_remain_bounded_across_kinds() {
    use rand::Rng;
    for kind in [ModelKind::Nqs, ModelKind::Hnqs, ModelKind::Ahnqs] {
        let config = ModelConfig::new(kind, 6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let model = Model::new(config.clone(), ModelParams::init(&config, &mut rng).unwrap());
        let mut state = model.new_state(false);
        for step in 0..300 {
            model.observe(&mut state, rng.gen_range(0..6)).unwrap();
            if step % 11 == 10 {
                model.end_session(&mut state, None).unwrap();
            }
            assert!(state.h.iter().all(|&x| x > -1.0 && x < 1.0));
        }
    }
}

/// The batch schedule is a pure function of (corpus, batch size, seed).
#[test]
fn schedule_reproducibility_over_random_corpora() {
    use ahnqs::batcher::{schedule, BatchStep};
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let histories: Vec<UserHistory> = (0..rng.gen_range(1..5))
            .map(|u| UserHistory {
                user_id: format!("u{u}"),
                sessions: (0..rng.gen_range(1..4))
                    .map(|s| {
                        let len = rng.gen_range(2..6);
                        Session {
                            user_id: format!("u{u}"),
                            index: s,
                            tokens: (0..len).map(|_| rng.gen_range(0..9)).collect(),
                            timestamps: (0..len as i64).collect(),
                        }
                    })
                    .collect(),
            })
            .collect();
        let seed = rng.gen();
        let a: Vec<BatchStep> = schedule(&histories, 3, seed).unwrap().collect();
        let b: Vec<BatchStep> = schedule(&histories, 3, seed).unwrap().collect();
        assert_eq!(a, b);
    }
}
