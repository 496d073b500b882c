//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x+h) - f(x-h)) / 2h`.
pub fn central_diff_gradient<F>(f: &F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numeric(
                "central_diff_gradient",
                format!("f non-finite at perturbed coordinate {i}"),
            ));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `max_i |a_i - n_i| / max(1, |a_i|, |n_i|)` — the relative error used by
/// every gradient check in this crate.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / 1.0f64.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

/// Compare an analytic gradient against central differences.
pub fn grad_check<F>(f: &F, analytic: &[f64], x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let numeric = central_diff_gradient(f, x, h)?;
    Ok(max_relative_error(analytic, &numeric))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_to_roundoff() {
        // f(x) = x^T x, grad = 2x; central differences are exact for
        // quadratics up to floating-point roundoff.
        let x = vec![1.0, 2.0, 3.0];
        let f = |xs: &[f64]| xs.iter().map(|v| v * v).sum::<f64>();
        let analytic: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let err = grad_check(&f, &analytic, &x, 1e-5).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = vec![0.4, -1.2];
        let f = |_: &[f64]| 42.0;
        let err = grad_check(&f, &[0.0, 0.0], &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = vec![1.0];
        let f = |xs: &[f64]| xs[0] * xs[0];
        let err = grad_check(&f, &[5.0], &x, 1e-5).unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let f = |_: &[f64]| 0.0;
        assert!(central_diff_gradient(&f, &[1.0], 0.0).is_err());
    }

    #[test]
    fn rejects_non_finite_function() {
        let g = |_: &[f64]| f64::NAN;
        assert!(central_diff_gradient(&g, &[1.0], 1e-5).is_err());
    }
}
