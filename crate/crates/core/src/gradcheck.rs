//! Central finite-difference gradient checking.

use crate::error::{Error, Result};

/// Compares an analytic gradient against central finite differences of
/// `loss_fn`, one scalar parameter at a time, and returns the worst relative
/// error. `params` is restored to its original values before returning.
///
/// The relative error of a pair (numeric n, analytic a) is
/// |n - a| / max(|n| + |a|, 1e-8); the floor keeps pairs that are both zero
/// from reporting spurious error.
pub fn finite_diff_check<F>(
    params: &mut [f64],
    analytic: &[f64],
    eps: f64,
    mut loss_fn: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::BadEpsilon(eps));
    }
    if params.len() != analytic.len() {
        return Err(Error::Dimension {
            op: "finite_diff_check",
            left: params.len().to_string(),
            right: analytic.len().to_string(),
        });
    }

    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let original = params[i];

        params[i] = original + eps;
        let plus = checked(loss_fn(params)?)?;
        params[i] = original - eps;
        let minus = checked(loss_fn(params)?)?;
        params[i] = original;

        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(numeric, analytic[i]);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / (numeric.abs() + analytic.abs()).max(1e-8)
}

fn checked(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFiniteLoss(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // f(w) = w^2 at w = 3: analytic gradient 6.
        let mut w = [3.0];
        let analytic = [6.0];
        let worst = finite_diff_check(&mut w, &analytic, 1e-5, |p| Ok(p[0] * p[0])).unwrap();
        assert!(worst < 1e-9, "relative error {worst}");
        assert_eq!(w[0], 3.0, "parameters must be restored");
    }

    #[test]
    fn zero_eps_rejected() {
        let mut w = [1.0];
        let err = finite_diff_check(&mut w, &[0.0], 0.0, |_| Ok(0.0)).unwrap_err();
        assert!(matches!(err, Error::BadEpsilon(_)));
    }

    #[test]
    fn non_finite_loss_propagates() {
        let mut w = [1.0];
        let err = finite_diff_check(&mut w, &[0.0], 1e-5, |p| Ok(1.0 / (p[0] - p[0]))).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(_)));
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut w = [2.0];
        // Claim gradient 1.0 for f(w) = w^2 (true gradient 4.0).
        let worst = finite_diff_check(&mut w, &[1.0], 1e-5, |p| Ok(p[0] * p[0])).unwrap();
        assert!(worst > 0.5);
    }
}
