//! AdaGrad with momentum.
//!
//! Per scalar parameter, with gradient g:
//!
//! ```text
//! G += g*g
//! adapted = g / (sqrt(G) + epsilon)
//! v = momentum * v + adapted
//! p -= lr * v
//! ```
//!
//! With momentum 0 this is plain AdaGrad, and a zero gradient moves nothing;
//! the model-level optimizer exploits that to update only the touched
//! columns of the large input and output matrices. With momentum above 0 the
//! velocity keeps moving untouched parameters, so those gradients are
//! densified and applied in full.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::models::ModelParams;

use super::backward::ModelGradAccum;

pub const ADAGRAD_EPSILON: f64 = 1e-6;

/// Accumulated squared gradients and velocity for one parameter tensor.
#[derive(Debug, Clone)]
pub struct OptTensorState {
    pub accum: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl OptTensorState {
    pub fn new(len: usize) -> Self {
        OptTensorState { accum: vec![0.0; len], velocity: vec![0.0; len] }
    }
}

/// One dense optimizer step over a full tensor.
pub fn adagrad_momentum_step(
    state: &mut OptTensorState,
    name: &str,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.accum.len() {
        return Err(Error::Dimension {
            op: "adagrad step",
            left: params.len().to_string(),
            right: grads.len().to_string(),
        });
    }
    for i in 0..params.len() {
        let g = grads[i];
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        state.accum[i] += g * g;
        let adapted = g / (state.accum[i].sqrt() + ADAGRAD_EPSILON);
        state.velocity[i] = momentum * state.velocity[i] + adapted;
        params[i] -= lr * state.velocity[i];
    }
    Ok(())
}

/// Momentum-free update of a single matrix column; exactly the dense step
/// restricted to the entries the gradient touches.
fn adagrad_column_step(
    state: &mut OptTensorState,
    name: &str,
    params: &mut [f64],
    cols: usize,
    col: usize,
    grad: &Vector,
    lr: f64,
) -> Result<()> {
    for i in 0..grad.dim() {
        let g = grad[i];
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        let idx = i * cols + col;
        state.accum[idx] += g * g;
        let adapted = g / (state.accum[idx].sqrt() + ADAGRAD_EPSILON);
        params[idx] -= lr * adapted;
    }
    Ok(())
}

/// Optimizer state for every tensor of a model, in declaration order.
#[derive(Debug, Clone)]
pub struct ModelOptimizer {
    lr: f64,
    momentum: f64,
    clip: Option<f64>,
    names: Vec<&'static str>,
    states: Vec<OptTensorState>,
}

impl ModelOptimizer {
    pub fn new(params: &ModelParams, lr: f64, momentum: f64, clip: Option<f64>) -> Self {
        let mut names = Vec::new();
        let mut states = Vec::new();
        for (name, tensor) in params.tensors() {
            names.push(name);
            states.push(OptTensorState::new(tensor.as_slice().len()));
        }
        ModelOptimizer { lr, momentum, clip, names, states }
    }

    /// Applies one accumulated gradient to the parameters.
    pub fn apply(&mut self, params: &mut ModelParams, acc: &ModelGradAccum) -> Result<()> {
        // Aggregate per-column contributions: the same token may be touched
        // several times within one batch step, and the update must see the
        // summed gradient exactly once.
        let mut session_cols: BTreeMap<u32, [Vector; 3]> = BTreeMap::new();
        let d = params.session_gru.hidden_dim();
        for (token, du, dr, dc) in &acc.session_gru.input_columns {
            let entry = session_cols
                .entry(*token)
                .or_insert_with(|| [Vector::zeros(d), Vector::zeros(d), Vector::zeros(d)]);
            entry[0].add_scaled(du, 1.0)?;
            entry[1].add_scaled(dr, 1.0)?;
            entry[2].add_scaled(dc, 1.0)?;
        }
        let mut output_cols: BTreeMap<u32, Vector> = BTreeMap::new();
        for (token, col) in &acc.output_cols {
            output_cols
                .entry(*token)
                .or_insert_with(|| Vector::zeros(d))
                .add_scaled(col, 1.0)?;
        }

        let scale = self.clip_scale(acc, &session_cols, &output_cols)?;
        if scale != 1.0 {
            for cols in session_cols.values_mut() {
                for v in cols.iter_mut() {
                    scale_in_place(v, scale);
                }
            }
            for v in output_cols.values_mut() {
                scale_in_place(v, scale);
            }
        }

        let vocab = params.session_gru.input_dim();
        let lr = self.lr;
        let momentum = self.momentum;
        let mut dense: Vec<Option<Vec<f64>>> = vec![None; self.names.len()];

        // Dense gradients in tensor order; sparse tensors left as None
        // (momentum 0) or densified (momentum > 0).
        let mut idx = 0;
        let take = |grad: &[f64], dense: &mut Vec<Option<Vec<f64>>>, idx: &mut usize| {
            dense[*idx] = Some(if scale == 1.0 {
                grad.to_vec()
            } else {
                grad.iter().map(|g| g * scale).collect()
            });
            *idx += 1;
        };

        if momentum > 0.0 {
            let [iu, ir, ic] = acc.session_gru.dense_input_grads(d, vocab);
            take(iu.as_slice(), &mut dense, &mut idx);
            take(ir.as_slice(), &mut dense, &mut idx);
            take(ic.as_slice(), &mut dense, &mut idx);
        } else {
            idx += 3;
        }
        take(acc.session_gru.hidden_update.as_slice(), &mut dense, &mut idx);
        take(acc.session_gru.hidden_reset.as_slice(), &mut dense, &mut idx);
        take(acc.session_gru.hidden_cand.as_slice(), &mut dense, &mut idx);
        if let Some(g) = &acc.user_gru {
            let input = g.input_dense.as_ref().expect("user-level accumulator is dense");
            take(input[0].as_slice(), &mut dense, &mut idx);
            take(input[1].as_slice(), &mut dense, &mut idx);
            take(input[2].as_slice(), &mut dense, &mut idx);
            take(g.hidden_update.as_slice(), &mut dense, &mut idx);
            take(g.hidden_reset.as_slice(), &mut dense, &mut idx);
            take(g.hidden_cand.as_slice(), &mut dense, &mut idx);
        }
        if let Some(m) = &acc.init_w {
            take(m.as_slice(), &mut dense, &mut idx);
        }
        if let Some(b) = &acc.init_b {
            take(b.as_slice(), &mut dense, &mut idx);
        }
        if let Some(a) = &acc.attention {
            take(a.as_slice(), &mut dense, &mut idx);
        }
        if momentum > 0.0 {
            // Densify from the raw accumulator: `take` applies the clip
            // scale itself, and `output_cols` is already scaled.
            let mut output = Matrix::zeros(d, vocab);
            for (token, col) in &acc.output_cols {
                output.add_column_scaled(*token as usize, col, 1.0)?;
            }
            take(output.as_slice(), &mut dense, &mut idx);
        } else {
            idx += 1;
        }
        debug_assert_eq!(idx, self.names.len());

        let slices = params.tensor_slices_mut();
        let output_tensor_index = slices.len() - 1;
        for (((i, slice), state), name) in
            slices.into_iter().enumerate().zip(&mut self.states).zip(&self.names)
        {
            if let Some(grads) = &dense[i] {
                adagrad_momentum_step(state, name, slice, grads, lr, momentum)?;
            } else if i < 3 {
                // Sparse session-level input matrices, momentum 0.
                for (token, cols) in &session_cols {
                    adagrad_column_step(state, name, slice, vocab, *token as usize, &cols[i], lr)?;
                }
            } else if i == output_tensor_index {
                for (token, col) in &output_cols {
                    adagrad_column_step(state, name, slice, vocab, *token as usize, col, lr)?;
                }
            }
        }
        Ok(())
    }

    /// Global-norm clipping factor; also rejects non-finite gradients.
    fn clip_scale(
        &self,
        acc: &ModelGradAccum,
        session_cols: &BTreeMap<u32, [Vector; 3]>,
        output_cols: &BTreeMap<u32, Vector>,
    ) -> Result<f64> {
        let Some(clip) = self.clip else {
            // Still surface non-finite gradients early for dense tensors;
            // the per-entry checks in the update loops cover the rest.
            return Ok(1.0);
        };
        let mut sq = 0.0;
        let mut add = |slice: &[f64], name: &str| -> Result<()> {
            for &g in slice {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(name.to_string()));
                }
                sq += g * g;
            }
            Ok(())
        };
        for cols in session_cols.values() {
            for v in cols.iter() {
                add(v.as_slice(), "session_gru.input")?;
            }
        }
        add(acc.session_gru.hidden_update.as_slice(), "session_gru.hidden_update")?;
        add(acc.session_gru.hidden_reset.as_slice(), "session_gru.hidden_reset")?;
        add(acc.session_gru.hidden_cand.as_slice(), "session_gru.hidden_cand")?;
        if let Some(g) = &acc.user_gru {
            let input = g.input_dense.as_ref().expect("user-level accumulator is dense");
            add(input[0].as_slice(), "user_gru.input_update")?;
            add(input[1].as_slice(), "user_gru.input_reset")?;
            add(input[2].as_slice(), "user_gru.input_cand")?;
            add(g.hidden_update.as_slice(), "user_gru.hidden_update")?;
            add(g.hidden_reset.as_slice(), "user_gru.hidden_reset")?;
            add(g.hidden_cand.as_slice(), "user_gru.hidden_cand")?;
        }
        if let Some(m) = &acc.init_w {
            add(m.as_slice(), "init_w")?;
        }
        if let Some(b) = &acc.init_b {
            add(b.as_slice(), "init_b")?;
        }
        if let Some(a) = &acc.attention {
            add(a.as_slice(), "attention")?;
        }
        for v in output_cols.values() {
            add(v.as_slice(), "output")?;
        }
        let norm = sq.sqrt();
        Ok(if norm > clip { clip / norm } else { 1.0 })
    }
}

fn scale_in_place(v: &mut Vector, factor: f64) {
    for x in v.as_mut_slice() {
        *x *= factor;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_matches_hand_computation() {
        // g = 1, lr = 0.1, momentum 0: delta = -0.1 / (1 + 1e-6).
        let mut state = OptTensorState::new(1);
        let mut p = [0.0];
        adagrad_momentum_step(&mut state, "w", &mut p, &[1.0], 0.1, 0.0).unwrap();
        assert!((p[0] - (-0.0999999000001)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut state = OptTensorState::new(2);
        let mut p = [1.5, -2.0];
        adagrad_momentum_step(&mut state, "w", &mut p, &[0.0, 0.0], 0.5, 0.9).unwrap();
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn zero_momentum_is_plain_adagrad_for_any_sequence() {
        let grads = [[0.5, -1.0], [0.25, 2.0], [-0.75, 0.1], [1.5, -0.4]];
        let mut with_momentum_api = OptTensorState::new(2);
        let mut p1 = [0.3, -0.2];
        // Plain AdaGrad by hand.
        let mut p2 = [0.3, -0.2];
        let mut g_acc = [0.0f64, 0.0];
        for g in grads {
            adagrad_momentum_step(&mut with_momentum_api, "w", &mut p1, &g, 0.05, 0.0).unwrap();
            for i in 0..2 {
                g_acc[i] += g[i] * g[i];
                p2[i] -= 0.05 * g[i] / (g_acc[i].sqrt() + ADAGRAD_EPSILON);
            }
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut state = OptTensorState::new(1);
        let mut p = [0.0];
        adagrad_momentum_step(&mut state, "w", &mut p, &[1.0], 0.1, 0.5).unwrap();
        let after_one = p[0];
        adagrad_momentum_step(&mut state, "w", &mut p, &[1.0], 0.1, 0.5).unwrap();
        // Second step moves further than a momentum-free step would.
        let g_acc: f64 = 2.0;
        let plain_delta = 0.1 * 1.0 / (g_acc.sqrt() + ADAGRAD_EPSILON);
        assert!((after_one - p[0]) > plain_delta);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut state = OptTensorState::new(1);
        let mut p = [0.0];
        let err =
            adagrad_momentum_step(&mut state, "attention", &mut p, &[f64::NAN], 0.1, 0.0).unwrap_err();
        assert!(err.to_string().contains("attention"));
    }

    #[test]
    fn clipping_applies_once_regardless_of_momentum_path() {
        // On the very first step the velocity is zero, so a momentum update
        // equals the momentum-free one; with clipping active both paths must
        // therefore produce identical parameters. (The momentum path
        // densifies sparse gradients, the other applies them per column.)
        use crate::models::{ModelConfig, ModelKind, ModelParams};
        use crate::training::backward::ModelGradAccum;

        let config = ModelConfig::new(ModelKind::Nqs, 3, 2);
        let mut acc = ModelGradAccum::zeros(ModelKind::Nqs, 2, 3);
        acc.output_cols.push((1, Vector::from_vec(vec![3.0, 4.0]))); // norm 5

        let mut with_momentum = ModelParams::zeros(&config).unwrap();
        let mut without = ModelParams::zeros(&config).unwrap();
        ModelOptimizer::new(&with_momentum, 0.1, 0.5, Some(2.5))
            .apply(&mut with_momentum, &acc)
            .unwrap();
        ModelOptimizer::new(&without, 0.1, 0.0, Some(2.5))
            .apply(&mut without, &acc)
            .unwrap();
        assert_eq!(with_momentum.flatten(), without.flatten());

        // And the clipped value itself: scale 0.5, so g = 1.5 on entry
        // (0, 1) of the output tensor; G = g^2, sqrt(G) = 1.5.
        let expected0 = -0.1 * (1.5 / (1.5 + ADAGRAD_EPSILON));
        assert!((without.output.get(0, 1) - expected0).abs() < 1e-12);
        assert_eq!(without.output.get(0, 0), 0.0);
    }

    #[test]
    fn column_step_equals_dense_step_on_touched_column() {
        let cols = 3;
        let mut dense_state = OptTensorState::new(2 * cols);
        let mut sparse_state = OptTensorState::new(2 * cols);
        let mut dense_params = vec![0.5; 2 * cols];
        let mut sparse_params = vec![0.5; 2 * cols];

        let mut dense_grads = vec![0.0; 2 * cols];
        dense_grads[1] = 0.7; // (0, 1)
        dense_grads[cols + 1] = -0.2; // (1, 1)
        adagrad_momentum_step(&mut dense_state, "w", &mut dense_params, &dense_grads, 0.1, 0.0)
            .unwrap();

        let col = Vector::from_vec(vec![0.7, -0.2]);
        adagrad_column_step(&mut sparse_state, "w", &mut sparse_params, cols, 1, &col, 0.1)
            .unwrap();

        assert_eq!(dense_params, sparse_params);
        assert_eq!(dense_state.accum, sparse_state.accum);
    }
}
