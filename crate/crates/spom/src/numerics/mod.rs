//! Dense-matrix kernels, the reverse-mode tape, Adam, and the
//! finite-difference gradient checker.
//!
//! All kernels are pure functions of their inputs and safe to call from any
//! number of threads. A [`Tape`] is single-owner while recording.

mod adam;
mod gradcheck;
mod matrix;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{central_diff_gradient, grad_check, max_relative_error};
pub use matrix::{
    add, concat_rows, cross_entropy, matmul, mean_rows, relu, softmax_rows, Matrix, PROB_EPSILON,
};
pub use tape::{Gradients, NodeId, Tape};

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn small_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
        (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-1.0f64..1.0, r * c)
                .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_are_stochastic(m in small_matrix(6)) {
            let s = softmax_rows(&m).unwrap();
            for r in 0..s.rows() {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn softmax_shift_invariant(m in small_matrix(5), shift in -10.0f64..10.0) {
            let shifted = m.map(|v| v + shift);
            let a = softmax_rows(&m).unwrap();
            let b = softmax_rows(&shifted).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn identity_matmul_is_exact(m in small_matrix(6)) {
            let left = matmul(&Matrix::identity(m.rows()), &m).unwrap();
            let right = matmul(&m, &Matrix::identity(m.cols())).unwrap();
            prop_assert_eq!(&left, &m);
            prop_assert_eq!(&right, &m);
        }

        #[test]
        fn cross_entropy_pair_bound(p in 1e-9f64..=1.0) {
            // ce(p) + ce(1-p) >= 2 ln 2, equality iff p = 0.5.
            let p = p.min(1.0 - 1e-9);
            let total = cross_entropy(p).unwrap() + cross_entropy(1.0 - p).unwrap();
            let floor = 2.0 * std::f64::consts::LN_2;
            prop_assert!(total >= floor - 1e-12);
            if (p - 0.5).abs() > 1e-6 {
                prop_assert!(total > floor);
            }
        }
    }

    #[test]
    fn cross_entropy_pair_equality_at_half() {
        let total = cross_entropy(0.5).unwrap() + cross_entropy(0.5).unwrap();
        assert!((total - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }
}
