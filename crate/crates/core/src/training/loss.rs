//! TOP1 pairwise ranking loss.
//!
//! For a positive score s_i and negative scores s_j, j = 1..N:
//!
//! ```text
//! loss = (1/N) * sum_j [ sigmoid(s_j - s_i) + sigmoid(s_j^2) ]
//! ```
//!
//! The first term pushes the positive above each negative; the second
//! regularizes negative scores toward zero, which keeps the tanh output
//! layer out of its saturated tails.

use crate::error::{Error, Result};
use crate::linalg::{sigmoid, sigmoid_prime_from_output};

pub fn top1_loss(positive: f64, negatives: &[f64]) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let sum: f64 = negatives
        .iter()
        .map(|&s| sigmoid(s - positive) + sigmoid(s * s))
        .sum();
    Ok(sum / negatives.len() as f64)
}

/// Analytic gradient of [`top1_loss`] w.r.t. the positive score and each
/// negative score.
pub fn top1_grad(positive: f64, negatives: &[f64]) -> Result<(f64, Vec<f64>)> {
    if negatives.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    let n = negatives.len() as f64;
    let mut d_positive = 0.0;
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for &s in negatives {
        let rank_prime = sigmoid_prime_from_output(sigmoid(s - positive));
        let reg_prime = sigmoid_prime_from_output(sigmoid(s * s));
        d_positive -= rank_prime / n;
        d_negatives.push((rank_prime + 2.0 * s * reg_prime) / n);
    }
    Ok((d_positive, d_negatives))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_at_origin_is_one() {
        // sigmoid(0) + sigmoid(0) = 1.
        assert_eq!(top1_loss(0.0, &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn loss_with_dominant_positive() {
        // sigmoid(-10) + sigmoid(0), evaluated independently.
        let loss = top1_loss(10.0, &[0.0]).unwrap();
        assert!((loss - 0.5000453978687024).abs() < 1e-12);
    }

    #[test]
    fn averaging_over_negatives() {
        assert_eq!(top1_loss(0.0, &[0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn empty_negatives_rejected() {
        assert!(matches!(top1_loss(0.0, &[]).unwrap_err(), Error::EmptyNegatives));
        assert!(matches!(top1_grad(0.0, &[]).unwrap_err(), Error::EmptyNegatives));
    }

    #[test]
    fn gradient_at_origin() {
        // sigma'(0) = 1/4; the regularizer term vanishes at s_j = 0.
        let (dp, dn) = top1_grad(0.0, &[0.0]).unwrap();
        assert_eq!(dp, -0.25);
        assert_eq!(dn, vec![0.25]);
    }

    #[test]
    fn loss_term_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let pos = rng.gen_range(-3.0..3.0);
            let negs: Vec<f64> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let loss = top1_loss(pos, &negs).unwrap();
            assert!(loss > 0.0 && loss < 2.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Central differences at eps 1e-5 carry absolute noise around 1e-10
        // here; the gradient must agree to 1e-8. (A relative bound would be
        // dominated by roundoff whenever the true gradient is near zero.)
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let eps = 1e-5;
        for _ in 0..100 {
            let pos = rng.gen_range(-2.0..2.0);
            let negs: Vec<f64> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (dp, dn) = top1_grad(pos, &negs).unwrap();

            let numeric_dp = (top1_loss(pos + eps, &negs).unwrap()
                - top1_loss(pos - eps, &negs).unwrap())
                / (2.0 * eps);
            assert!((numeric_dp - dp).abs() < 1e-8);

            for j in 0..negs.len() {
                let mut plus = negs.clone();
                plus[j] += eps;
                let mut minus = negs.clone();
                minus[j] -= eps;
                let numeric = (top1_loss(pos, &plus).unwrap() - top1_loss(pos, &minus).unwrap())
                    / (2.0 * eps);
                assert!((numeric - dn[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn deep_negative_score_pushed_toward_zero() {
        // Near the floor of the tanh score range the ranking term is small
        // but the regularizer is not: its sign drives s_j back toward zero
        // (negative gradient, i.e. upward pressure on s_j).
        let (_, dn) = top1_grad(0.99, &[-0.99]).unwrap();
        assert!(dn[0] < 0.0);

        // Far outside the realistic score range the regularizer's sigmoid
        // saturates to exactly 1 in f64 and its derivative underflows to 0,
        // so the gradient degenerates to the (tiny, positive) ranking term.
        let (_, dn) = top1_grad(0.0, &[-50.0]).unwrap();
        assert!(dn[0].abs() < 1e-20);
    }
}
