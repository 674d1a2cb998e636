//! Bias-corrected Adam for the filter parameter fit.
//!
//! Projection onto the feasible set happens outside the optimizer after
//! every step; first and second moments are deliberately not reset when
//! a projection moves the parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    /// Momentum defaults with the aggressive learning rate used by the
    /// filter inner loop.
    fn default() -> Self {
        AdamConfig {
            learning_rate: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            problems.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One Adam update in place: m and v are updated with the gradient,
    /// bias correction applied, and the parameters moved against the
    /// corrected moment ratio.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(idx) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(
                "adam_step",
                format!("non-finite gradient at parameter {idx}"),
            ));
        }
        let c = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn config(lr: f64) -> AdamConfig {
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut state = AdamState::new(config(0.1), 3).unwrap();
        let mut params = vec![1.0, -2.0, 3.5];
        let before = params.clone();
        state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_magnitude_is_close_to_learning_rate() {
        for g in [0.3, -4.0, 100.0] {
            let mut state = AdamState::new(config(0.5), 1).unwrap();
            let mut params = vec![0.0];
            state.step(&mut params, &[g]).unwrap();
            let step = params[0].abs();
            assert!(step > 0.99 * 0.5 && step <= 0.5 + 1e-12, "step {step}");
            assert_eq!(params[0].signum(), -g.signum());
        }
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // f(p) = (p - 3)^2, gradient 2 (p - 3).
        let mut state = AdamState::new(config(0.1), 1).unwrap();
        let mut params = vec![10.0];
        for _ in 0..500 {
            let grad = 2.0 * (params[0] - 3.0);
            state.step(&mut params, &[grad]).unwrap();
        }
        assert!((params[0] - 3.0).abs() < 1e-3, "ended at {}", params[0]);
    }

    #[test]
    fn trajectory_is_deterministic() {
        let run = || {
            let mut state = AdamState::new(config(0.05), 2).unwrap();
            let mut params = vec![1.0, -1.0];
            for i in 0..100 {
                let g = [params[0] * 0.3 + i as f64 * 1e-3, params[1].powi(3)];
                state.step(&mut params, &g).unwrap();
            }
            params
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn update_direction_opposes_gradient_componentwise() {
        let mut state = AdamState::new(config(0.01), 4).unwrap();
        let mut params = vec![0.0; 4];
        let grad = [1.0, -2.0, 3.0, -0.5];
        state.step(&mut params, &grad).unwrap();
        for (p, g) in params.iter().zip(&grad) {
            assert!(p * g < 0.0);
        }
    }

    #[test]
    fn first_step_is_scale_invariant_in_gradient() {
        // Adam normalizes by sqrt(v_hat): scaling the gradient leaves
        // the first update nearly unchanged.
        let run = |scale: f64| {
            let mut state = AdamState::new(config(0.1), 1).unwrap();
            let mut params = vec![0.0];
            state.step(&mut params, &[scale * 2.0]).unwrap();
            params[0]
        };
        assert_relative_eq!(run(1.0), run(1000.0), max_relative = 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_an_error_naming_the_index() {
        let mut state = AdamState::new(config(0.1), 3).unwrap();
        let mut params = vec![0.0; 3];
        let err = state.step(&mut params, &[0.0, f64::NAN, 0.0]).unwrap_err();
        assert!(err.to_string().contains("parameter 1"));
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(AdamConfig { learning_rate: 0.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { epsilon: 0.0, ..AdamConfig::default() }.validate().is_err());
    }
}
