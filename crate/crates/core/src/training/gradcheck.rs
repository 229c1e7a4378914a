//! Whole-model gradient checking against central finite differences.
//!
//! The check builds a small two-session graph (the full defined computation:
//! session recurrence, output layer, initialization projection, user-level
//! recurrence, attention), accumulates analytic gradients with the same
//! backward machinery the trainer uses, and perturbs every scalar parameter
//! to compare.
//!
//! The initial user-level hidden state is a seeded non-zero leaf: with the
//! zero state a first transition produces identically-zero attention scores
//! and the bilinear attention form would receive exactly zero gradient,
//! leaving that path unchecked. A leaf input is constant under parameter
//! perturbation, so finite differences remain exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::finite_diff_check;
use crate::linalg::Vector;
use crate::models::{Model, ModelConfig, ModelKind, ModelParams};

use super::backward::{backprop_step, ModelGradAccum};
use super::loss::{top1_grad, top1_loss};

/// Result of one whole-model gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Largest-magnitude analytic gradient entry of the attention form,
    /// `None` for kinds without attention.
    pub attention_grad_linf: Option<f64>,
    pub loss: f64,
}

struct ToyGraph {
    config: ModelConfig,
    sessions: Vec<Vec<u32>>,
    /// Fixed negatives per (session, step), two per scored step.
    negatives: Vec<Vec<Vec<u32>>>,
    initial_user: Vector,
}

fn toy_graph(kind: ModelKind, seed: u64) -> ToyGraph {
    let vocab = 6usize;
    let hidden = 4usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sessions: Vec<Vec<u32>> = [4usize, 3]
        .iter()
        .map(|&len| (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect())
        .collect();
    let negatives = sessions
        .iter()
        .map(|session| {
            session
                .windows(2)
                .map(|pair| {
                    let target = pair[1];
                    let mut negs = Vec::with_capacity(2);
                    while negs.len() < 2 {
                        let candidate = rng.gen_range(0..vocab as u32);
                        if candidate != target {
                            negs.push(candidate);
                        }
                    }
                    negs
                })
                .collect()
        })
        .collect();
    let initial_user =
        Vector::from_vec((0..hidden).map(|_| rng.gen_range(-0.5..0.5)).collect());
    ToyGraph { config: ModelConfig::new(kind, vocab, hidden), sessions, negatives, initial_user }
}

/// Total TOP1 loss of the toy graph under the given parameters.
fn toy_loss(toy: &ToyGraph, params: ModelParams) -> Result<f64> {
    let model = Model::new(toy.config.clone(), params);
    let mut state = model.new_state(false);
    model.begin_user_with_state(&mut state, toy.initial_user.clone());

    let mut loss = 0.0;
    for (s_idx, session) in toy.sessions.iter().enumerate() {
        if s_idx > 0 {
            model.end_session(&mut state, None)?;
        }
        for (m, &token) in session.iter().enumerate() {
            model.observe(&mut state, token)?;
            if m + 1 < session.len() {
                let mut tokens = vec![session[m + 1]];
                tokens.extend_from_slice(&toy.negatives[s_idx][m]);
                let scores = model.score_tokens(&state.h, &tokens);
                loss += top1_loss(scores[0], &scores[1..])?;
            }
        }
    }
    Ok(loss)
}

/// Analytic gradient of the toy loss, via the trainer's backward machinery.
fn toy_gradient(toy: &ToyGraph, params: &ModelParams) -> Result<(f64, ModelGradAccum)> {
    let model = Model::new(toy.config.clone(), params.clone());
    let mut acc =
        ModelGradAccum::zeros(toy.config.kind, toy.config.hidden_dim, toy.config.vocab_size);
    let mut state = model.new_state(true);
    model.begin_user_with_state(&mut state, toy.initial_user.clone());

    let mut loss = 0.0;
    for (s_idx, session) in toy.sessions.iter().enumerate() {
        if s_idx > 0 {
            model.end_session(&mut state, None)?;
        }
        for (m, &token) in session.iter().enumerate() {
            model.observe(&mut state, token)?;
            if m + 1 < session.len() {
                let mut tokens = vec![session[m + 1]];
                tokens.extend_from_slice(&toy.negatives[s_idx][m]);
                let scores = model.score_tokens(&state.h, &tokens);
                loss += top1_loss(scores[0], &scores[1..])?;
                let (d_positive, d_negatives) = top1_grad(scores[0], &scores[1..])?;
                let mut d_scores = vec![d_positive];
                d_scores.extend_from_slice(&d_negatives);
                let scored: Vec<(u32, f64)> = tokens.into_iter().zip(scores).collect();
                backprop_step(&model, &state, &scored, &d_scores, &state.h, None, &mut acc)?;
            }
        }
    }
    Ok((loss, acc))
}

/// Byte offset of a named tensor inside the flattened parameter vector.
fn tensor_range(params: &ModelParams, name: &str) -> Option<std::ops::Range<usize>> {
    let mut offset = 0;
    for (n, t) in params.tensors() {
        let len = t.as_slice().len();
        if n == name {
            return Some(offset..offset + len);
        }
        offset += len;
    }
    None
}

/// Builds the full computation graph for the kind and compares every
/// parameter's analytic gradient against central finite differences
/// (eps 1e-5).
pub fn check_model_gradients(kind: ModelKind, seed: u64) -> Result<GradCheckReport> {
    let toy = toy_graph(kind, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5);
    let params = ModelParams::init(&toy.config, &mut rng)?;

    let (loss, acc) = toy_gradient(&toy, &params)?;
    let analytic = acc.flatten();

    let template = params.clone();
    let mut flat = params.flatten();
    let max_rel_error = finite_diff_check(&mut flat, &analytic, 1e-5, |theta| {
        toy_loss(&toy, template.from_flat(theta))
    })?;

    let attention_grad_linf = tensor_range(&params, "attention").map(|range| {
        analytic[range].iter().fold(0.0f64, |m, &g| m.max(g.abs()))
    });

    Ok(GradCheckReport { max_rel_error, attention_grad_linf, loss })
}
