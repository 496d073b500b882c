//! Two-proportion z-test on accuracies.

use crate::error::{Error, Result};
use crate::harness::ConfusionMatrix;

/// Two-sided two-proportion z-test comparing the accuracies of two
/// evaluations over the same number of samples. Returns the p-value.
pub fn significance_test(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Result<f64> {
    let (n_a, n_b) = (a.total(), b.total());
    if n_a == 0 || n_b == 0 {
        return Err(Error::Config("significance test over zero samples".into()));
    }
    if n_a != n_b {
        return Err(Error::Config(format!(
            "sample counts differ: {n_a} vs {n_b}"
        )));
    }
    let p1 = a.correct() as f64 / n_a as f64;
    let p2 = b.correct() as f64 / n_b as f64;
    let pooled = (a.correct() + b.correct()) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 || p1 == p2 {
        // Identical proportions (or a degenerate pooled rate): no evidence
        // of a difference at all.
        return Ok(1.0);
    }
    let z = (p1 - p2) / se;
    Ok((2.0 * normal_sf(z.abs())).min(1.0))
}

/// Standard normal survival function `1 - Phi(z)` via a rational
/// approximation of erfc (absolute error below 1.5e-7, which is far inside
/// every threshold this crate tests against).
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let sign_negative = x < 0.0;
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let value = poly * (-x * x).exp();
    if sign_negative {
        2.0 - value
    } else {
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Oracle: tail mass of the standard normal by Simpson integration of
    /// the density over [z, z + 40].
    fn normal_sf_oracle(z: f64) -> f64 {
        let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (a, b) = (z, z + 40.0);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let mut sum = density(a) + density(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            sum += density(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    fn matrix_with(correct: usize, total: usize) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(correct, total - correct, 0, 0)
    }

    #[test]
    fn survival_function_matches_integration_oracle() {
        for z in [0.0, 0.3, 0.447, 1.0, 1.96, 2.5, 3.5] {
            let got = normal_sf(z);
            let want = normal_sf_oracle(z);
            assert!((got - want).abs() < 1e-6, "z={z}: {got} vs {want}");
        }
    }

    #[test]
    fn identical_matrices_give_p_one() {
        let a = ConfusionMatrix::from_counts(431, 114, 386, 69);
        assert_eq!(significance_test(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn large_gap_is_significant() {
        let a = matrix_with(900, 1000);
        let b = matrix_with(500, 1000);
        let p = significance_test(&a, &b).unwrap();
        assert!(p < 1e-6, "p = {p}");
        // Oracle route.
        let p1 = 0.9;
        let p2 = 0.5;
        let pooled: f64 = 0.7;
        let se = (pooled * (1.0 - pooled) * (2.0 / 1000.0)).sqrt();
        let z = (p1 - p2) / se;
        let oracle = 2.0 * normal_sf_oracle(z.abs());
        assert!(oracle < 1e-6);
    }

    #[test]
    fn small_gap_is_not_significant() {
        let a = matrix_with(510, 1000);
        let b = matrix_with(500, 1000);
        let p = significance_test(&a, &b).unwrap();
        assert!(p > 0.05, "p = {p}");
        // Cross-check against the integration oracle.
        let pooled: f64 = 1010.0 / 2000.0;
        let se = (pooled * (1.0 - pooled) * (2.0 / 1000.0)).sqrt();
        let z = (0.51 - 0.5) / se;
        let oracle = 2.0 * normal_sf_oracle(z.abs());
        assert!((p - oracle).abs() < 1e-5, "{p} vs {oracle}");
    }

    #[test]
    fn zero_samples_rejected() {
        let empty = ConfusionMatrix::new(0.5);
        let a = matrix_with(1, 2);
        assert!(significance_test(&empty, &a).is_err());
    }

    #[test]
    fn mismatched_sample_counts_rejected() {
        let a = matrix_with(5, 10);
        let b = matrix_with(5, 12);
        assert!(significance_test(&a, &b).is_err());
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = matrix_with(700, 1000);
        let b = matrix_with(650, 1000);
        let p_ab = significance_test(&a, &b).unwrap();
        let p_ba = significance_test(&b, &a).unwrap();
        assert_eq!(p_ab, p_ba);
    }
}
