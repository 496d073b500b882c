//! Adam with bias correction and (by default) decoupled weight decay.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Decoupled decay subtracts `lr * weight_decay * param` directly from
    /// the parameter. When false, the decay term is folded into the gradient
    /// before the moment updates (classic L2 coupling).
    pub decoupled_weight_decay: bool,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-1,
            decoupled_weight_decay: true,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
    // Running beta^t, updated multiplicatively so the bias correction is
    // identical no matter how powers would round elsewhere.
    beta1_pow: f64,
    beta2_pow: f64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            beta1_pow: 1.0,
            beta2_pow: 1.0,
            config,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }
}

/// One Adam update over a flat parameter view. Deterministic: identical
/// `(params, grads, state)` produce bitwise-identical results.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            (params.len(), 1),
            (grads.len(), state.m.len()),
        ));
    }
    let c = state.config.clone();
    state.step += 1;
    state.beta1_pow *= c.beta1;
    state.beta2_pow *= c.beta2;
    let bias1 = 1.0 - state.beta1_pow;
    let bias2 = 1.0 - state.beta2_pow;

    for i in 0..params.len() {
        let mut g = grads[i];
        if !c.decoupled_weight_decay && c.weight_decay != 0.0 {
            g += c.weight_decay * params[i];
        }
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
        if c.decoupled_weight_decay && c.weight_decay != 0.0 {
            params[i] -= c.lr * c.weight_decay * params[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: the scalar Adam recurrence written out longhand.
    fn scalar_adam_oracle(x0: f64, grad: f64, steps: u64, c: &AdamConfig) -> f64 {
        let mut x = x0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            m = c.beta1 * m + (1.0 - c.beta1) * grad;
            v = c.beta2 * v + (1.0 - c.beta2) * grad * grad;
            let m_hat = m / (1.0 - c.beta1.powi(t as i32));
            let v_hat = v / (1.0 - c.beta2.powi(t as i32));
            x -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        x
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![1.0, -2.5, 0.75];
        let grads = vec![0.0; 3];
        let cfg = AdamConfig {
            weight_decay: 0.0,
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(3, cfg);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, vec![1.0, -2.5, 0.75]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn default_hyperparameters() {
        let c = AdamConfig::default();
        assert_eq!(c.beta1, 0.9);
        assert_eq!(c.beta2, 0.999);
        assert_eq!(c.lr, 1e-6);
        assert_eq!(c.weight_decay, 1e-1);
    }

    #[test]
    fn single_step_matches_scalar_recurrence_oracle() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, cfg.clone());
        adam_step(&mut params, &[2.0], &mut state).unwrap();
        let expected = scalar_adam_oracle(1.0, 2.0, 1, &cfg);
        assert!((params[0] - expected).abs() < 1e-12);
        // First step with unit-bias correction moves by ~lr in the gradient
        // direction regardless of gradient magnitude.
        assert!((params[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn multi_step_matches_scalar_recurrence_oracle() {
        let cfg = AdamConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut params = vec![-0.3];
        let mut state = AdamState::new(1, cfg.clone());
        for _ in 0..7 {
            adam_step(&mut params, &[0.8], &mut state).unwrap();
        }
        let expected = scalar_adam_oracle(-0.3, 0.8, 7, &cfg);
        assert!((params[0] - expected).abs() < 1e-12);
        assert_eq!(state.step(), 7);
    }

    #[test]
    fn decoupled_decay_shrinks_toward_zero() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, cfg);
        adam_step(&mut params, &[0.0], &mut state).unwrap();
        // Zero gradient: only the decay acts, scaled by lr.
        assert!((params[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn coupled_decay_goes_through_moments() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            decoupled_weight_decay: false,
            ..AdamConfig::default()
        };
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, cfg.clone());
        adam_step(&mut params, &[0.0], &mut state).unwrap();
        // Effective gradient 0.5: bias-corrected first step is ~lr.
        let expected = scalar_adam_oracle(1.0, 0.5, 1, &cfg);
        assert!((params[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn deterministic_bitwise() {
        let cfg = AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        };
        let run = || {
            let mut params = vec![0.5, -0.25, 1.5];
            let mut state = AdamState::new(3, cfg.clone());
            for i in 0..20 {
                let g = [0.1 * i as f64, -0.2, 0.05];
                adam_step(&mut params, &g, &mut state).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![1.0, 2.0];
        let mut state = AdamState::new(2, AdamConfig::default());
        assert!(adam_step(&mut params, &[1.0], &mut state).is_err());
    }
}
