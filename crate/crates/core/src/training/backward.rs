//! Backpropagation over the recorded computation graph.
//!
//! The loss at a step of the current session flows:
//!
//! 1. through the output layer into the session hidden state,
//! 2. back through every recorded step of the current session (full
//!    within-session backpropagation through time),
//! 3. through the initialization projection into the user state,
//! 4. through the user-level GRU step and, for the attentive kind, the
//!    attention weights, into the stored hidden states of the previous
//!    session,
//! 5. back through the previous session's recorded steps to its own
//!    initialization projection.
//!
//! Flow is truncated there: gradients w.r.t. the user state that preceded
//! the previous session (and the user hidden state entering the user-level
//! GRU) are dropped, so no gradient reaches two sessions back. Within a
//! two-session window the machinery differentiates the graph exactly, which
//! is what the finite-difference model check verifies.

use std::collections::VecDeque;

use crate::error::Result;
use crate::gru::{self, GruGradAccum};
use crate::linalg::{Matrix, Vector};
use crate::models::{InitCache, Model, ModelKind, ModelParams, PrevSessionGraph, SlotState, StepRecord};

/// Gradient accumulator for a whole model. Session-level input gradients
/// and output-projection gradients are kept as touched columns only.
#[derive(Debug, Clone)]
pub struct ModelGradAccum {
    pub session_gru: GruGradAccum,
    pub user_gru: Option<GruGradAccum>,
    pub init_w: Option<Matrix>,
    pub init_b: Option<Vector>,
    pub attention: Option<Matrix>,
    /// (token, d output column) contributions.
    pub output_cols: Vec<(u32, Vector)>,
    hidden_dim: usize,
    vocab_size: usize,
}

impl ModelGradAccum {
    pub fn zeros(kind: ModelKind, hidden_dim: usize, vocab_size: usize) -> Self {
        ModelGradAccum {
            session_gru: GruGradAccum::zeros(hidden_dim, vocab_size, false),
            user_gru: kind
                .is_hierarchical()
                .then(|| GruGradAccum::zeros(hidden_dim, hidden_dim, true)),
            init_w: kind.is_hierarchical().then(|| Matrix::zeros(hidden_dim, hidden_dim)),
            init_b: kind.is_hierarchical().then(|| Vector::zeros(hidden_dim)),
            attention: kind.has_attention().then(|| Matrix::zeros(hidden_dim, hidden_dim)),
            output_cols: Vec::new(),
            hidden_dim,
            vocab_size,
        }
    }

    pub fn clear(&mut self) {
        self.session_gru.clear();
        if let Some(g) = &mut self.user_gru {
            g.clear();
        }
        if let Some(m) = &mut self.init_w {
            m.as_mut_slice().fill(0.0);
        }
        if let Some(b) = &mut self.init_b {
            b.fill(0.0);
        }
        if let Some(a) = &mut self.attention {
            a.as_mut_slice().fill(0.0);
        }
        self.output_cols.clear();
    }

    /// Densifies into the flat layout of [`ModelParams::flatten`], for
    /// gradient checks on small models.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let [iu, ir, ic] = self.session_gru.dense_input_grads(self.hidden_dim, self.vocab_size);
        for m in [&iu, &ir, &ic, &self.session_gru.hidden_update, &self.session_gru.hidden_reset, &self.session_gru.hidden_cand]
        {
            out.extend_from_slice(m.as_slice());
        }
        if let Some(g) = &self.user_gru {
            let dense = g.input_dense.as_ref().expect("user-level accumulator is dense");
            for m in [&dense[0], &dense[1], &dense[2], &g.hidden_update, &g.hidden_reset, &g.hidden_cand] {
                out.extend_from_slice(m.as_slice());
            }
        }
        if let Some(m) = &self.init_w {
            out.extend_from_slice(m.as_slice());
        }
        if let Some(b) = &self.init_b {
            out.extend_from_slice(b.as_slice());
        }
        if let Some(a) = &self.attention {
            out.extend_from_slice(a.as_slice());
        }
        let mut output = Matrix::zeros(self.hidden_dim, self.vocab_size);
        for (token, col) in &self.output_cols {
            output.add_column_scaled(*token as usize, col, 1.0).unwrap();
        }
        out.extend_from_slice(output.as_slice());
        out
    }
}

/// Backpropagates one scored step's loss gradient through the whole defined
/// graph, accumulating parameter gradients.
///
/// * `scored` — the scored token ids (positive first, then negatives) with
///   their tanh scores.
/// * `d_scores` — the loss gradient w.r.t. each score, same order.
/// * `h_scored` — the hidden state the scores were computed from (after any
///   dropout mask).
/// * `hidden_mask` — the inverted-dropout mask, if one was applied.
pub fn backprop_step(
    model: &Model,
    state: &SlotState,
    scored: &[(u32, f64)],
    d_scores: &[f64],
    h_scored: &Vector,
    hidden_mask: Option<&Vector>,
    acc: &mut ModelGradAccum,
) -> Result<()> {
    let params = &model.params;
    let d = model.config.hidden_dim;

    // Output layer: s_k = tanh(h . W_out[:, k]).
    let mut dh = Vector::zeros(d);
    for (&(token, score), &ds) in scored.iter().zip(d_scores) {
        let dz = ds * (1.0 - score * score);
        acc.output_cols.push((token, scale(h_scored, dz)));
        for i in 0..d {
            dh[i] += params.output.get(i, token as usize) * dz;
        }
    }
    if let Some(mask) = hidden_mask {
        dh = dh.mul(mask)?;
    }

    // Full within-session backpropagation through time.
    let dh0 = bptt_tail(params, &state.tape, state.truncated, dh, acc)?;
    let Some(dh0) = dh0 else {
        return Ok(()); // session longer than the tape cap: stop at the cut
    };

    if model.config.kind == ModelKind::Nqs {
        return Ok(()); // h0 is the zero constant
    }

    let Some(init) = &state.init else {
        return Ok(());
    };
    let d_user_state = backprop_init(params, init, &dh0, acc)?;

    if let Some(prev) = &state.prev {
        backprop_transition(model, prev, d_user_state, acc)?;
    }
    // No previous session: the user state is the zero constant (or a leaf
    // starting state); nothing further to reach.
    Ok(())
}

fn scale(v: &Vector, factor: f64) -> Vector {
    Vector::from_vec(v.iter().map(|x| x * factor).collect())
}

/// Walks the recorded session backwards from its last step with an initial
/// upstream gradient. Returns the gradient w.r.t. the session's initial
/// hidden state, or `None` when the tape was truncated.
fn bptt_tail(
    params: &ModelParams,
    tape: &VecDeque<StepRecord>,
    truncated: bool,
    dh_last: Vector,
    acc: &mut ModelGradAccum,
) -> Result<Option<Vector>> {
    let mut dh = dh_last;
    for record in tape.iter().rev() {
        let cache = record.cache.as_ref().expect("training slots record step caches");
        let signals = gru::backward_accumulate(&params.session_gru, cache, &dh, &mut acc.session_gru)?;
        dh = signals.d_h_prev;
    }
    Ok(if truncated { None } else { Some(dh) })
}

/// As [`bptt_tail`], but with a per-step injected gradient (the previous
/// session's stored states receiving gradient through the hierarchy).
fn bptt_injected(
    params: &ModelParams,
    tape: &VecDeque<StepRecord>,
    truncated: bool,
    injections: Vec<Vector>,
    acc: &mut ModelGradAccum,
) -> Result<Option<Vector>> {
    debug_assert_eq!(tape.len(), injections.len());
    let mut dh = Vector::zeros(injections.first().map(|v| v.dim()).unwrap_or(0));
    for (record, injection) in tape.iter().rev().zip(injections.into_iter().rev()) {
        dh.add_scaled(&injection, 1.0)?;
        let cache = record.cache.as_ref().expect("training slots record step caches");
        let signals = gru::backward_accumulate(&params.session_gru, cache, &dh, &mut acc.session_gru)?;
        dh = signals.d_h_prev;
    }
    Ok(if truncated { None } else { Some(dh) })
}

/// h0 = tanh(W (u * mask) + b): accumulates dW, db and returns the gradient
/// w.r.t. the user state.
fn backprop_init(
    params: &ModelParams,
    init: &InitCache,
    dh0: &Vector,
    acc: &mut ModelGradAccum,
) -> Result<Vector> {
    let d = dh0.dim();
    let mut d_pre = Vector::zeros(d);
    for i in 0..d {
        d_pre[i] = dh0[i] * (1.0 - init.h0[i] * init.h0[i]);
    }
    let masked_user = match &init.mask {
        Some(m) => init.user_state.mul(m)?,
        None => init.user_state.clone(),
    };
    acc.init_w
        .as_mut()
        .expect("hierarchical accumulator")
        .add_outer_scaled(&d_pre, &masked_user, 1.0)?;
    acc.init_b.as_mut().expect("hierarchical accumulator").add_scaled(&d_pre, 1.0)?;

    let w = params.init_w.as_ref().expect("hierarchical params");
    let mut d_user = w.matvec_transpose(&d_pre)?;
    if let Some(m) = &init.mask {
        d_user = d_user.mul(m)?;
    }
    Ok(d_user)
}

/// Backpropagates the gradient w.r.t. the user state produced at the end of
/// the previous session: through the user-level GRU, the attention (when
/// present) and the previous session's recurrence down to its own
/// initialization projection, where flow into older sessions is cut.
fn backprop_transition(
    model: &Model,
    prev: &PrevSessionGraph,
    d_user_state: Vector,
    acc: &mut ModelGradAccum,
) -> Result<()> {
    let params = &model.params;
    let user_gru = params.user_gru.as_ref().expect("hierarchical params");
    let user_acc = acc.user_gru.as_mut().expect("hierarchical accumulator");

    let signals =
        gru::backward_accumulate(user_gru, &prev.transition.user_cache, &d_user_state, user_acc)?;
    // signals.d_h_prev reaches the user hidden state before this transition,
    // i.e. material from two sessions back: truncated.
    let d_summary = signals.d_input.expect("user-level input is dense");

    let injections: Vec<Vector> = match &prev.transition.attention {
        None => {
            // Plain hierarchy: the summary is the last stored state.
            let mut inj = vec![Vector::zeros(d_summary.dim()); prev.tape.len()];
            *inj.last_mut().expect("finished session has states") = d_summary;
            inj
        }
        Some(attn) => {
            let states: Vec<&Vector> = prev.tape.iter().map(|r| &r.h).collect();
            let alpha = &attn.alpha;
            // C = sum_j alpha_j h_j.
            let mut d_alpha = Vector::zeros(states.len());
            let mut inj: Vec<Vector> = vec![Vector::zeros(d_summary.dim()); states.len()];
            for (j, h) in states.iter().enumerate() {
                d_alpha[j] = d_summary.dot(h)?;
                inj[j] = scale(&d_summary, alpha[j]);
            }
            // Softmax backward: de_j = alpha_j (d_alpha_j - sum_k alpha_k d_alpha_k).
            let weighted: f64 = (0..states.len()).map(|k| alpha[k] * d_alpha[k]).sum();
            let mut d_e = Vector::zeros(states.len());
            for j in 0..states.len() {
                d_e[j] = alpha[j] * (d_alpha[j] - weighted);
            }
            // e_j = u^T W_a h_j.
            let attention_matrix = params.attention.as_ref().expect("attentive params");
            let projected = attention_matrix.matvec_transpose(&attn.user_hidden_prev)?;
            let d_attention = acc.attention.as_mut().expect("attentive accumulator");
            for (j, h) in states.iter().enumerate() {
                d_attention.add_outer_scaled(&attn.user_hidden_prev, h, d_e[j])?;
                inj[j].add_scaled(&projected, d_e[j])?;
            }
            // d user_hidden_prev is material from before this session: truncated.
            inj
        }
    };

    let dh0_prev = bptt_injected(params, &prev.tape, prev.truncated, injections, acc)?;
    if let Some(dh0_prev) = dh0_prev {
        if let Some(init) = &prev.init {
            // Accumulate into the projection; the returned gradient w.r.t.
            // the user state two sessions back is dropped.
            let _ = backprop_init(params, init, &dh0_prev, acc)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::models::ModelConfig;
    use crate::training::loss::{top1_grad, top1_loss};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// The dropout-mask pathways against finite differences: a fixed
    /// inverted-dropout mask on the hidden state before the output layer,
    /// and one on the user state before the initialization projection.
    #[test]
    fn masked_paths_match_finite_differences() {
        let config = ModelConfig::new(ModelKind::Hnqs, 5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let params = ModelParams::init(&config, &mut rng).unwrap();

        // Fixed masks: keep probability 2/3, survivors scaled by 1.5.
        let user_mask = Vector::from_vec(vec![1.5, 0.0, 1.5]);
        let hidden_mask = Vector::from_vec(vec![0.0, 1.5, 1.5]);
        let target = 3u32;
        let negatives = [0u32, 4];

        let walk = |params: ModelParams, record: bool| -> (Model, crate::models::SlotState, f64, Vec<f64>, Vec<(u32, f64)>) {
            let model = Model::new(config.clone(), params);
            let mut state = model.new_state(record);
            // Session 1, then a masked transition into session 2.
            model.observe(&mut state, 1).unwrap();
            model.observe(&mut state, 2).unwrap();
            model.end_session(&mut state, Some(user_mask.clone())).unwrap();
            // One scored step in session 2 with a masked hidden state.
            model.observe(&mut state, 0).unwrap();
            let h_scored = state.h.mul(&hidden_mask).unwrap();
            let mut tokens = vec![target];
            tokens.extend_from_slice(&negatives);
            let scores = model.score_tokens(&h_scored, &tokens);
            let loss = top1_loss(scores[0], &scores[1..]).unwrap();
            let scored: Vec<(u32, f64)> = tokens.into_iter().zip(scores).collect();
            (model, state, loss, h_scored.as_slice().to_vec(), scored)
        };

        // Analytic gradient.
        let (model, state, loss, h_scored, scored) = walk(params.clone(), true);
        let mut acc = ModelGradAccum::zeros(config.kind, config.hidden_dim, config.vocab_size);
        let (d_pos, d_negs) = {
            let s: Vec<f64> = scored.iter().map(|&(_, v)| v).collect();
            top1_grad(s[0], &s[1..]).unwrap()
        };
        let mut d_scores = vec![d_pos];
        d_scores.extend_from_slice(&d_negs);
        backprop_step(
            &model,
            &state,
            &scored,
            &d_scores,
            &Vector::from_vec(h_scored),
            Some(&hidden_mask),
            &mut acc,
        )
        .unwrap();
        let analytic = acc.flatten();

        // Finite differences over every parameter, replaying the same walk.
        let template = params.clone();
        let mut flat = params.flatten();
        let worst = finite_diff_check(&mut flat, &analytic, 1e-5, |theta| {
            let (_, _, loss, _, _) = walk(template.from_flat(theta), false);
            Ok(loss)
        })
        .unwrap();
        assert!(worst < 1e-6, "masked-path gradient error {worst}");
        assert!(loss.is_finite());
    }
}
