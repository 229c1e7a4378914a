//! A gated recurrent unit with analytic forward and backward passes.
//!
//! The cell has no bias terms: the recurrence is
//!
//! ```text
//! u = sigmoid(I_u x + H_u h_prev)          update gate
//! r = sigmoid(I_r x + H_r h_prev)          reset gate
//! c = tanh(I x + H (r * h_prev))           candidate state
//! h = (1 - u) * h_prev + u * c             next hidden state
//! ```
//!
//! Inputs come in two flavours: a dense vector (used by the user-level
//! recurrence, whose input is a session summary), or a single token id (used
//! by the session-level recurrence, where the input is a 1-of-N encoded
//! query). Token inputs are never materialized as one-hot vectors; products
//! with the input matrices reduce to column lookups.

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, sigmoid_prime_from_output, Matrix, Vector};
use rand::Rng;

/// The six trainable matrices of one GRU cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input_update: Matrix,
    pub input_reset: Matrix,
    pub input_cand: Matrix,
    pub hidden_update: Matrix,
    pub hidden_reset: Matrix,
    pub hidden_cand: Matrix,
}

impl GruParams {
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        GruParams {
            input_update: Matrix::zeros(hidden_dim, input_dim),
            input_reset: Matrix::zeros(hidden_dim, input_dim),
            input_cand: Matrix::zeros(hidden_dim, input_dim),
            hidden_update: Matrix::zeros(hidden_dim, hidden_dim),
            hidden_reset: Matrix::zeros(hidden_dim, hidden_dim),
            hidden_cand: Matrix::zeros(hidden_dim, hidden_dim),
        }
    }

    pub fn glorot_uniform<R: Rng>(hidden_dim: usize, input_dim: usize, rng: &mut R) -> Self {
        GruParams {
            input_update: Matrix::glorot_uniform(hidden_dim, input_dim, rng),
            input_reset: Matrix::glorot_uniform(hidden_dim, input_dim, rng),
            input_cand: Matrix::glorot_uniform(hidden_dim, input_dim, rng),
            hidden_update: Matrix::glorot_uniform(hidden_dim, hidden_dim, rng),
            hidden_reset: Matrix::glorot_uniform(hidden_dim, hidden_dim, rng),
            hidden_cand: Matrix::glorot_uniform(hidden_dim, hidden_dim, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_update.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.input_update.cols()
    }
}

/// A GRU input: either a dense vector or a 1-of-N token id.
#[derive(Debug, Clone, PartialEq)]
pub enum GruInput {
    Token(u32),
    Dense(Vector),
}

impl GruInput {
    fn check(&self, p: &GruParams) -> Result<()> {
        match self {
            GruInput::Token(t) => {
                if *t as usize >= p.input_dim() {
                    return Err(Error::TokenOutOfRange { token: *t, vocab: p.input_dim() });
                }
            }
            GruInput::Dense(x) => {
                if x.dim() != p.input_dim() {
                    return Err(Error::Dimension {
                        op: "gru input",
                        left: format!("{}x{}", p.hidden_dim(), p.input_dim()),
                        right: x.dim().to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// x-product with an input matrix: a matvec for dense inputs, a column
/// lookup for token inputs.
fn input_product(m: &Matrix, x: &GruInput) -> Result<Vector> {
    match x {
        GruInput::Token(t) => Ok(m.column(*t as usize)),
        GruInput::Dense(v) => m.matvec(v),
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub input: GruInput,
    pub h_prev: Vector,
    pub update: Vector,
    pub reset: Vector,
    pub candidate: Vector,
}

/// Advances one step and returns the new hidden state with its cache.
pub fn forward(p: &GruParams, x: &GruInput, h_prev: &Vector) -> Result<(Vector, GruStepCache)> {
    forward_with_gate_overrides(p, x, h_prev, None, None)
}

/// Forward step with optional frozen gates. Overriding a gate replaces its
/// computed activation wholesale, which pins down the recurrence structure
/// in tests (e.g. u = 1 makes the next state equal the candidate state).
pub fn forward_with_gate_overrides(
    p: &GruParams,
    x: &GruInput,
    h_prev: &Vector,
    update_override: Option<&Vector>,
    reset_override: Option<&Vector>,
) -> Result<(Vector, GruStepCache)> {
    x.check(p)?;
    let d = p.hidden_dim();
    if h_prev.dim() != d {
        return Err(Error::Dimension {
            op: "gru h_prev",
            left: d.to_string(),
            right: h_prev.dim().to_string(),
        });
    }

    let update = match update_override {
        Some(u) => u.clone(),
        None => {
            let a = input_product(&p.input_update, x)?.add(&p.hidden_update.matvec(h_prev)?)?;
            Vector::from_vec(a.iter().map(|&v| sigmoid(v)).collect())
        }
    };
    let reset = match reset_override {
        Some(r) => r.clone(),
        None => {
            let a = input_product(&p.input_reset, x)?.add(&p.hidden_reset.matvec(h_prev)?)?;
            Vector::from_vec(a.iter().map(|&v| sigmoid(v)).collect())
        }
    };
    let gated_prev = reset.mul(h_prev)?;
    let candidate = input_product(&p.input_cand, x)?
        .add(&p.hidden_cand.matvec(&gated_prev)?)?
        .tanh();

    let mut h_next = Vector::zeros(d);
    for i in 0..d {
        h_next[i] = (1.0 - update[i]) * h_prev[i] + update[i] * candidate[i];
    }

    let cache = GruStepCache {
        input: x.clone(),
        h_prev: h_prev.clone(),
        update,
        reset,
        candidate,
    };
    Ok((h_next, cache))
}

/// Gradients of one GRU step: one matrix per parameter, plus the gradients
/// flowing out of the step into its input and previous hidden state.
#[derive(Debug, Clone)]
pub struct GruGrads {
    pub input_update: Matrix,
    pub input_reset: Matrix,
    pub input_cand: Matrix,
    pub hidden_update: Matrix,
    pub hidden_reset: Matrix,
    pub hidden_cand: Matrix,
    /// Gradient w.r.t. the input vector; `None` for token inputs, where the
    /// input is a constant indicator.
    pub d_input: Option<Vector>,
    pub d_h_prev: Vector,
}

/// Gradient accumulator for a GRU cell. Hidden-to-hidden gradients are always
/// dense; input-to-hidden gradients are dense for dense inputs and held as
/// per-column entries for token inputs, so a large-vocabulary cell never
/// allocates full input-matrix gradients.
#[derive(Debug, Clone)]
pub struct GruGradAccum {
    pub hidden_update: Matrix,
    pub hidden_reset: Matrix,
    pub hidden_cand: Matrix,
    pub input_dense: Option<[Matrix; 3]>,
    /// (token, d_update, d_reset, d_candidate) contributions.
    pub input_columns: Vec<(u32, Vector, Vector, Vector)>,
}

impl GruGradAccum {
    pub fn zeros(hidden_dim: usize, input_dim: usize, dense_input: bool) -> Self {
        GruGradAccum {
            hidden_update: Matrix::zeros(hidden_dim, hidden_dim),
            hidden_reset: Matrix::zeros(hidden_dim, hidden_dim),
            hidden_cand: Matrix::zeros(hidden_dim, hidden_dim),
            input_dense: if dense_input {
                Some([
                    Matrix::zeros(hidden_dim, input_dim),
                    Matrix::zeros(hidden_dim, input_dim),
                    Matrix::zeros(hidden_dim, input_dim),
                ])
            } else {
                None
            },
            input_columns: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.hidden_update.as_mut_slice().fill(0.0);
        self.hidden_reset.as_mut_slice().fill(0.0);
        self.hidden_cand.as_mut_slice().fill(0.0);
        if let Some(dense) = &mut self.input_dense {
            for m in dense.iter_mut() {
                m.as_mut_slice().fill(0.0);
            }
        }
        self.input_columns.clear();
    }

    /// Densifies the input gradients into full matrices (small models and
    /// gradient checks only).
    pub fn dense_input_grads(&self, hidden_dim: usize, input_dim: usize) -> [Matrix; 3] {
        if let Some(dense) = &self.input_dense {
            return dense.clone();
        }
        let mut out = [
            Matrix::zeros(hidden_dim, input_dim),
            Matrix::zeros(hidden_dim, input_dim),
            Matrix::zeros(hidden_dim, input_dim),
        ];
        for (token, du, dr, dc) in &self.input_columns {
            out[0].add_column_scaled(*token as usize, du, 1.0).unwrap();
            out[1].add_column_scaled(*token as usize, dr, 1.0).unwrap();
            out[2].add_column_scaled(*token as usize, dc, 1.0).unwrap();
        }
        out
    }
}

/// Backpropagates `dh_next` through one cached step, accumulating parameter
/// gradients into `acc` and returning the gradient w.r.t. the previous
/// hidden state (and the input, when it is dense).
pub fn backward_accumulate(
    p: &GruParams,
    cache: &GruStepCache,
    dh_next: &Vector,
    acc: &mut GruGradAccum,
) -> Result<GruGrads2> {
    let d = p.hidden_dim();
    if dh_next.dim() != d {
        return Err(Error::Dimension {
            op: "gru dh_next",
            left: d.to_string(),
            right: dh_next.dim().to_string(),
        });
    }
    let (u, r, c, h_prev) = (&cache.update, &cache.reset, &cache.candidate, &cache.h_prev);

    // h = (1-u) h_prev + u c
    let mut d_update = Vector::zeros(d);
    let mut d_cand = Vector::zeros(d);
    let mut d_h_prev = Vector::zeros(d);
    for i in 0..d {
        d_update[i] = dh_next[i] * (c[i] - h_prev[i]);
        d_cand[i] = dh_next[i] * u[i];
        d_h_prev[i] = dh_next[i] * (1.0 - u[i]);
    }

    // c = tanh(a_c), a_c = I x + H (r h_prev)
    let mut da_cand = Vector::zeros(d);
    for i in 0..d {
        da_cand[i] = d_cand[i] * (1.0 - c[i] * c[i]);
    }
    let d_gated = p.hidden_cand.matvec_transpose(&da_cand)?;
    let mut d_reset = Vector::zeros(d);
    for i in 0..d {
        d_reset[i] = d_gated[i] * h_prev[i];
        d_h_prev[i] += d_gated[i] * r[i];
    }

    // Gates: pre-activation gradients through sigmoid'.
    let mut da_update = Vector::zeros(d);
    let mut da_reset = Vector::zeros(d);
    for i in 0..d {
        da_update[i] = d_update[i] * sigmoid_prime_from_output(u[i]);
        da_reset[i] = d_reset[i] * sigmoid_prime_from_output(r[i]);
    }
    d_h_prev.add_scaled(&p.hidden_update.matvec_transpose(&da_update)?, 1.0)?;
    d_h_prev.add_scaled(&p.hidden_reset.matvec_transpose(&da_reset)?, 1.0)?;

    // Parameter gradients.
    let gated_prev = r.mul(h_prev)?;
    acc.hidden_update.add_outer_scaled(&da_update, h_prev, 1.0)?;
    acc.hidden_reset.add_outer_scaled(&da_reset, h_prev, 1.0)?;
    acc.hidden_cand.add_outer_scaled(&da_cand, &gated_prev, 1.0)?;

    let d_input = match &cache.input {
        GruInput::Token(t) => {
            if let Some(dense) = &mut acc.input_dense {
                dense[0].add_column_scaled(*t as usize, &da_update, 1.0)?;
                dense[1].add_column_scaled(*t as usize, &da_reset, 1.0)?;
                dense[2].add_column_scaled(*t as usize, &da_cand, 1.0)?;
            } else {
                acc.input_columns.push((*t, da_update.clone(), da_reset.clone(), da_cand.clone()));
            }
            None
        }
        GruInput::Dense(x) => {
            let dense = acc.input_dense.as_mut().expect("dense-input cell must use a dense accumulator");
            dense[0].add_outer_scaled(&da_update, x, 1.0)?;
            dense[1].add_outer_scaled(&da_reset, x, 1.0)?;
            dense[2].add_outer_scaled(&da_cand, x, 1.0)?;
            let mut dx = p.input_update.matvec_transpose(&da_update)?;
            dx.add_scaled(&p.input_reset.matvec_transpose(&da_reset)?, 1.0)?;
            dx.add_scaled(&p.input_cand.matvec_transpose(&da_cand)?, 1.0)?;
            Some(dx)
        }
    };

    Ok(GruGrads2 { d_h_prev, d_input })
}

/// The non-parameter outputs of a backward step.
#[derive(Debug, Clone)]
pub struct GruGrads2 {
    pub d_h_prev: Vector,
    pub d_input: Option<Vector>,
}

/// One-shot backward pass returning dense gradients for every parameter.
/// Accumulation across time steps is the caller's responsibility.
pub fn backward(p: &GruParams, cache: &GruStepCache, dh_next: &Vector) -> Result<GruGrads> {
    let dense_input = matches!(cache.input, GruInput::Dense(_));
    let mut acc = GruGradAccum::zeros(p.hidden_dim(), p.input_dim(), dense_input);
    let signals = backward_accumulate(p, cache, dh_next, &mut acc)?;
    let [iu, ir, ic] = acc.dense_input_grads(p.hidden_dim(), p.input_dim());
    Ok(GruGrads {
        input_update: iu,
        input_reset: ir,
        input_cand: ic,
        hidden_update: acc.hidden_update,
        hidden_reset: acc.hidden_reset,
        hidden_cand: acc.hidden_cand,
        d_input: signals.d_input,
        d_h_prev: signals.d_h_prev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vector<R: Rng>(dim: usize, rng: &mut R) -> Vector {
        Vector::from_vec((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_params_zero_state_stay_zero() {
        let p = GruParams::zeros(3, 2);
        let (h, cache) = forward(&p, &GruInput::Dense(Vector::zeros(2)), &Vector::zeros(3)).unwrap();
        assert_eq!(h.as_slice(), &[0.0, 0.0, 0.0]);
        // Gates sit at sigmoid(0) = 0.5, candidate at tanh(0) = 0.
        assert!(cache.update.iter().all(|&u| u == 0.5));
        assert!(cache.reset.iter().all(|&r| r == 0.5));
        assert!(cache.candidate.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn frozen_update_gate_returns_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = GruParams::glorot_uniform(4, 3, &mut rng);
        let x = GruInput::Dense(rand_vector(3, &mut rng));
        let h_prev = rand_vector(4, &mut rng);
        let ones = Vector::from_vec(vec![1.0; 4]);
        let (h, cache) = forward_with_gate_overrides(&p, &x, &h_prev, Some(&ones), None).unwrap();
        assert_eq!(h.as_slice(), cache.candidate.as_slice());
    }

    #[test]
    fn frozen_update_gate_gradient_flows_through_candidate_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = GruParams::glorot_uniform(3, 2, &mut rng);
        let x = GruInput::Dense(rand_vector(2, &mut rng));
        let h_prev = rand_vector(3, &mut rng);
        let ones = Vector::from_vec(vec![1.0; 3]);
        let (_, cache) = forward_with_gate_overrides(&p, &x, &h_prev, Some(&ones), None).unwrap();
        let dh = rand_vector(3, &mut rng);
        let grads = backward(&p, &cache, &dh).unwrap();

        // Candidate-only route: da_c = dh (1 - c^2); d_h_prev = H^T da_c * r
        // plus the reset-gate branch that itself feeds the candidate.
        let d = 3;
        let mut da_cand = Vector::zeros(d);
        for i in 0..d {
            da_cand[i] = dh[i] * (1.0 - cache.candidate[i] * cache.candidate[i]);
        }
        let d_gated = p.hidden_cand.matvec_transpose(&da_cand).unwrap();
        let mut expected = Vector::zeros(d);
        let mut da_reset = Vector::zeros(d);
        for i in 0..d {
            expected[i] = d_gated[i] * cache.reset[i];
            da_reset[i] =
                d_gated[i] * cache.h_prev[i] * sigmoid_prime_from_output(cache.reset[i]);
        }
        expected
            .add_scaled(&p.hidden_reset.matvec_transpose(&da_reset).unwrap(), 1.0)
            .unwrap();
        for i in 0..d {
            assert!((grads.d_h_prev[i] - expected[i]).abs() < 1e-15);
        }
        // The update-gate input gradient vanishes when u is pinned at 1.
        assert!(grads.hidden_update.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_upstream_gradient_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParams::glorot_uniform(3, 2, &mut rng);
        let x = GruInput::Dense(rand_vector(2, &mut rng));
        let h_prev = rand_vector(3, &mut rng);
        let (_, cache) = forward(&p, &x, &h_prev).unwrap();
        let grads = backward(&p, &cache, &Vector::zeros(3)).unwrap();
        assert!(grads.hidden_cand.as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.input_cand.as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.d_h_prev.as_slice().iter().all(|&g| g == 0.0));
        assert!(grads.d_input.unwrap().as_slice().iter().all(|&g| g == 0.0));
    }

    /// Independent scalar re-implementation of the recurrence, written with
    /// bare index loops so it shares no code with the implementation above.
    #[allow(clippy::needless_range_loop)]
    fn scalar_oracle(p: &GruParams, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let d = p.hidden_dim();
        let n = p.input_dim();
        let dotrow = |m: &Matrix, v: &[f64], i: usize, len: usize| -> f64 {
            let mut s = 0.0;
            for j in 0..len {
                s += m.get(i, j) * v[j];
            }
            s
        };
        let mut h = vec![0.0; d];
        for i in 0..d {
            let u = sigmoid(dotrow(&p.input_update, x, i, n) + dotrow(&p.hidden_update, h_prev, i, d));
            // The candidate needs the full reset-gated previous state.
            let mut gated = vec![0.0; d];
            for (k, g) in gated.iter_mut().enumerate() {
                let rk = sigmoid(
                    dotrow(&p.input_reset, x, k, n) + dotrow(&p.hidden_reset, h_prev, k, d),
                );
                *g = rk * h_prev[k];
            }
            let c = (dotrow(&p.input_cand, x, i, n) + dotrow(&p.hidden_cand, &gated, i, d)).tanh();
            h[i] = (1.0 - u) * h_prev[i] + u * c;
        }
        h
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let d = rng.gen_range(1..=5);
            let n = rng.gen_range(1..=4);
            let p = GruParams::glorot_uniform(d, n, &mut rng);
            let x = rand_vector(n, &mut rng);
            let h_prev = rand_vector(d, &mut rng);
            let (h, _) = forward(&p, &GruInput::Dense(x.clone()), &h_prev).unwrap();
            let oracle = scalar_oracle(&p, x.as_slice(), h_prev.as_slice());
            for i in 0..d {
                assert!((h[i] - oracle[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn token_input_equals_dense_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GruParams::glorot_uniform(4, 6, &mut rng);
        let h_prev = rand_vector(4, &mut rng);
        for t in 0..6u32 {
            let mut onehot = Vector::zeros(6);
            onehot[t as usize] = 1.0;
            let (h_tok, _) = forward(&p, &GruInput::Token(t), &h_prev).unwrap();
            let (h_dense, _) = forward(&p, &GruInput::Dense(onehot), &h_prev).unwrap();
            assert_eq!(h_tok.as_slice(), h_dense.as_slice());
        }
    }

    #[test]
    fn gates_stay_in_open_unit_interval_and_state_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let d = rng.gen_range(1..=5);
            let n = rng.gen_range(1..=4);
            let p = GruParams::glorot_uniform(d, n, &mut rng);
            let x = GruInput::Dense(rand_vector(n, &mut rng));
            let h_prev = rand_vector(d, &mut rng);
            let (h, cache) = forward(&p, &x, &h_prev).unwrap();
            for i in 0..d {
                assert!(cache.update[i] > 0.0 && cache.update[i] < 1.0);
                assert!(cache.reset[i] > 0.0 && cache.reset[i] < 1.0);
                assert!(cache.candidate[i] > -1.0 && cache.candidate[i] < 1.0);
                let lo = h_prev[i].min(cache.candidate[i]);
                let hi = h_prev[i].max(cache.candidate[i]);
                assert!(h[i] >= lo - 1e-15 && h[i] <= hi + 1e-15);
            }
        }
    }

    /// Flattens params into one vector in a fixed order for finite differences.
    fn flatten(p: &GruParams) -> Vec<f64> {
        let mut out = Vec::new();
        for m in [
            &p.input_update,
            &p.input_reset,
            &p.input_cand,
            &p.hidden_update,
            &p.hidden_reset,
            &p.hidden_cand,
        ] {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    fn unflatten(template: &GruParams, flat: &[f64]) -> GruParams {
        let mut p = template.clone();
        let mut offset = 0;
        for m in [
            &mut p.input_update,
            &mut p.input_reset,
            &mut p.input_cand,
            &mut p.hidden_update,
            &mut p.hidden_reset,
            &mut p.hidden_cand,
        ] {
            let len = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        p
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let d = 2;
        let n = 2;
        let p = GruParams::glorot_uniform(d, n, &mut rng);
        let x = rand_vector(n, &mut rng);
        let h_prev = rand_vector(d, &mut rng);
        // Scalar loss: fixed random projection of the next state.
        let w = rand_vector(d, &mut rng);

        let (_, cache) = forward(&p, &GruInput::Dense(x.clone()), &h_prev).unwrap();
        let grads = backward(&p, &cache, &w).unwrap();

        let mut analytic = Vec::new();
        for m in [
            &grads.input_update,
            &grads.input_reset,
            &grads.input_cand,
            &grads.hidden_update,
            &grads.hidden_reset,
            &grads.hidden_cand,
        ] {
            analytic.extend_from_slice(m.as_slice());
        }

        let template = p.clone();
        let mut flat = flatten(&p);
        let max_err = finite_diff_check(&mut flat, &analytic, 1e-5, |theta| {
            let pp = unflatten(&template, theta);
            let (h, _) = forward(&pp, &GruInput::Dense(x.clone()), &h_prev)?;
            h.dot(&w)
        })
        .unwrap();
        assert!(max_err < 1e-6, "max relative error {max_err}");

        // Also check the input and previous-state gradients by perturbing them.
        let dx = grads.d_input.clone().unwrap();
        let mut xs = x.as_slice().to_vec();
        let max_err = finite_diff_check(&mut xs, dx.as_slice(), 1e-5, |xv| {
            let (h, _) = forward(&p, &GruInput::Dense(Vector::from_vec(xv.to_vec())), &h_prev)?;
            h.dot(&w)
        })
        .unwrap();
        assert!(max_err < 1e-6, "d_input relative error {max_err}");

        let mut hs = h_prev.as_slice().to_vec();
        let max_err = finite_diff_check(&mut hs, grads.d_h_prev.as_slice(), 1e-5, |hv| {
            let (h, _) = forward(&p, &GruInput::Dense(x.clone()), &Vector::from_vec(hv.to_vec()))?;
            h.dot(&w)
        })
        .unwrap();
        assert!(max_err < 1e-6, "d_h_prev relative error {max_err}");
    }

    #[test]
    fn token_backward_matches_dense_onehot_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = GruParams::glorot_uniform(3, 5, &mut rng);
        let h_prev = rand_vector(3, &mut rng);
        let dh = rand_vector(3, &mut rng);
        let t = 2u32;
        let mut onehot = Vector::zeros(5);
        onehot[t as usize] = 1.0;

        let (_, cache_tok) = forward(&p, &GruInput::Token(t), &h_prev).unwrap();
        let (_, cache_dense) = forward(&p, &GruInput::Dense(onehot), &h_prev).unwrap();
        let g_tok = backward(&p, &cache_tok, &dh).unwrap();
        let g_dense = backward(&p, &cache_dense, &dh).unwrap();

        assert_eq!(g_tok.input_update.as_slice(), g_dense.input_update.as_slice());
        assert_eq!(g_tok.input_cand.as_slice(), g_dense.input_cand.as_slice());
        assert_eq!(g_tok.hidden_cand.as_slice(), g_dense.hidden_cand.as_slice());
        assert_eq!(g_tok.d_h_prev.as_slice(), g_dense.d_h_prev.as_slice());
    }
}
