//! Exponentially-warped noise level discretization.

use crate::error::{Error, Result};

/// Decreasing noise levels tau_0 ... tau_{T-1} with endpoints pinned
/// exactly to sigma_start and sigma_min, plus the churn amount used by
/// the stochastic sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    sigma_start: f64,
    sigma_min: f64,
    rho: f64,
    s_churn: f64,
}

impl NoiseSchedule {
    /// tau_i = (sigma_start^(1/rho) + i/(T-1) (sigma_min^(1/rho) -
    /// sigma_start^(1/rho)))^rho, with i = 0 and i = T-1 assigned the
    /// endpoint values directly so they are exact to the bit.
    pub fn build(sigma_start: f64, sigma_min: f64, rho: f64, num_steps: usize) -> Result<Self> {
        let mut problems = Vec::new();
        if !(sigma_min > 0.0) || !sigma_min.is_finite() {
            problems.push(format!("sigma_min must be positive and finite, got {sigma_min}"));
        }
        if !(sigma_start > sigma_min) || !sigma_start.is_finite() {
            problems.push(format!(
                "sigma_start must exceed sigma_min, got {sigma_start} vs {sigma_min}"
            ));
        }
        if !(rho >= 1.0) || !rho.is_finite() {
            problems.push(format!("rho must be >= 1, got {rho}"));
        }
        if num_steps < 2 {
            problems.push(format!("schedule needs at least 2 steps, got {num_steps}"));
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }

        let t = num_steps;
        let a = sigma_start.powf(1.0 / rho);
        let b = sigma_min.powf(1.0 / rho);
        let mut sigmas = Vec::with_capacity(t);
        sigmas.push(sigma_start);
        for i in 1..t - 1 {
            let frac = i as f64 / (t - 1) as f64;
            sigmas.push((a + frac * (b - a)).powf(rho));
        }
        sigmas.push(sigma_min);

        for w in sigmas.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::numeric(
                    "schedule construction",
                    format!("levels not strictly decreasing: {} then {}", w[0], w[1]),
                ));
            }
        }
        Ok(NoiseSchedule {
            sigmas,
            sigma_start,
            sigma_min,
            rho,
            s_churn: 0.0,
        })
    }

    pub fn with_churn(mut self, s_churn: f64) -> Result<Self> {
        if !(s_churn >= 0.0) || !s_churn.is_finite() {
            return Err(Error::Config(format!(
                "churn must be non-negative and finite, got {s_churn}"
            )));
        }
        self.s_churn = s_churn;
        Ok(self)
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn num_steps(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigma_start(&self) -> f64 {
        self.sigma_start
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn s_churn(&self) -> f64 {
        self.s_churn
    }

    /// Per-step noise inflation factor: sigma is raised to
    /// sigma * (1 + churn_factor) before each step, capped so the
    /// inflated level at most doubles the variance.
    pub fn churn_factor(&self) -> f64 {
        if self.s_churn <= 0.0 {
            0.0
        } else {
            (self.s_churn / self.sigmas.len() as f64).min(std::f64::consts::SQRT_2 - 1.0)
        }
    }

    /// The schedule with a terminal 0 appended: transition j runs from
    /// extended[j] down to extended[j+1], the last one denoising fully.
    pub fn extended(&self) -> Vec<f64> {
        let mut out = self.sigmas.clone();
        out.push(0.0);
        out
    }
}
