//! Observation guidance: the reconstruction cost, its gradient with
//! respect to the noisy state, and the norm-based step-size rule.

use rand::RngCore;
use rand_distr::Distribution;

use crate::denoiser::DenoiserPrior;
use crate::error::{Error, Result};
use crate::fft;
use crate::filter::FilterParams;
use crate::ltas;
use crate::signal::{apply_zero_phase_gains, stft, Signal, StftConfig};

/// Which observation signal the costs see and how the start state is
/// initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestoreMode {
    /// Costs and warm start use the raw observations.
    Plain,
    /// Warm start from the spectrum-matched observations; costs still
    /// use the raw observations.
    LtasInit,
    /// Both warm start and costs use the spectrum-matched
    /// observations, so the estimated filter composes with the
    /// spectrum-matching equalizer.
    LtasObjective,
}

/// Per-bin weighting of the spectral magnitude cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralWeighting {
    Flat,
    /// 1 / (third-octave-smoothed mean magnitude + 0.1 x its maximum):
    /// quiet bands count as much as loud ones.
    InverseMagnitude,
}

#[derive(Debug, Clone)]
pub struct GuidanceConfig {
    /// Base step-size scale for the observation guidance.
    pub xi_prime: f64,
    /// Scale of the fresh Gaussian noise added to the observations at
    /// every sampler step.
    pub noise_reg_gamma: f64,
    pub mode: RestoreMode,
    pub weighting: SpectralWeighting,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            xi_prime: 1.0,
            noise_reg_gamma: 0.25,
            mode: RestoreMode::Plain,
            weighting: SpectralWeighting::InverseMagnitude,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.xi_prime >= 0.0) || !self.xi_prime.is_finite() {
            problems.push(format!(
                "guidance scale must be non-negative and finite, got {}",
                self.xi_prime
            ));
        }
        if !(self.noise_reg_gamma >= 0.0) || !self.noise_reg_gamma.is_finite() {
            problems.push(format!(
                "observation noise scale must be non-negative and finite, got {}",
                self.noise_reg_gamma
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Weights on the positive STFT bins (DC excluded) for the magnitude
/// cost. Flat returns all ones without touching the signal.
pub fn magnitude_weights(
    y: &Signal,
    cfg: StftConfig,
    weighting: SpectralWeighting,
) -> Result<Vec<f64>> {
    let n_bins = cfg.window_size() / 2;
    match weighting {
        SpectralWeighting::Flat => Ok(vec![1.0; n_bins]),
        SpectralWeighting::InverseMagnitude => {
            let spec = stft(y, cfg)?;
            let frames = spec.num_frames() as f64;
            let mut mean_mag = vec![0.0; n_bins];
            for frame in &spec.frames {
                for k in 1..=n_bins {
                    mean_mag[k - 1] += frame[k].norm() / frames;
                }
            }
            let freqs: Vec<f64> = (1..=n_bins)
                .map(|k| cfg.bin_freq(k, y.sample_rate()))
                .collect();
            let smoothed = ltas::smooth_log2(&freqs, &mean_mag);
            let max = smoothed.iter().cloned().fold(0.0f64, f64::max);
            if max <= 0.0 {
                return Ok(vec![1.0; n_bins]);
            }
            Ok(smoothed.iter().map(|&m| 1.0 / (m + 0.1 * max)).collect())
        }
    }
}

/// Step-size rule xi = xi_prime sqrt(N) / (sigma ||grad||): the
/// applied guidance vector xi * grad then has norm xi_prime sqrt(N) /
/// sigma regardless of the raw gradient scale. A zero gradient yields
/// scale 0 with the flag set.
pub fn guidance_scale(xi_prime: f64, sigma: f64, grad_norm: f64, n: usize) -> Result<(f64, bool)> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "guidance scale needs sigma > 0, got {sigma}"
        )));
    }
    if !grad_norm.is_finite() {
        return Err(Error::numeric(
            "guidance scale",
            format!("gradient norm is {grad_norm}"),
        ));
    }
    if grad_norm <= 0.0 {
        return Ok((0.0, true));
    }
    Ok((xi_prime * (n as f64).sqrt() / (sigma * grad_norm), false))
}

/// Inputs of the reconstruction cost for one sampler step. With
/// `prev_tail` set, the head of the segment (the first `prev_tail.len()`
/// samples) is constrained directly to the previous block's restored
/// tail and only the remainder is matched to the observations through
/// the filter.
pub struct AudioCostTerms<'a> {
    pub y_tilde: &'a Signal,
    /// Filter gains on the one-sided grid of the segment's padded FFT.
    pub gains: &'a [f64],
    pub prev_tail: Option<&'a [f64]>,
}

/// Value and x-gradient of the reconstruction cost.
#[derive(Debug, Clone)]
pub struct CostEval {
    pub cost: f64,
    /// Gradient with respect to the noisy state x (raw, unscaled).
    pub gradient: Signal,
    /// False when the prior's vector-Jacobian product fell back to
    /// finite differences.
    pub vjp_exact: bool,
}

/// Cost over the clean estimate:
///   || head mask (x_prev - x_hat0) ||^2 + || rest mask (y - H x_hat0) ||^2
/// and its gradient with respect to x, composed through the denoiser:
///   grad = vjp(x, sigma, 2 [head (x_hat0 - x_prev) + H(rest (H x_hat0 - y))]).
/// The zero-phase filter is self-adjoint, so H alone serves as its
/// transpose.
pub fn audio_cost_gradient(
    terms: &AudioCostTerms,
    x: &Signal,
    sigma: f64,
    x_hat0: &Signal,
    prior: &dyn DenoiserPrior,
) -> Result<CostEval> {
    let n = x.len();
    if x_hat0.len() != n || terms.y_tilde.len() != n {
        return Err(Error::Shape(format!(
            "cost inputs disagree in length: x {}, clean estimate {}, observations {}",
            n,
            x_hat0.len(),
            terms.y_tilde.len()
        )));
    }
    let t_ov = terms.prev_tail.map_or(0, |t| t.len());
    if t_ov > n {
        return Err(Error::Shape(format!(
            "previous tail ({t_ov} samples) longer than segment ({n})"
        )));
    }

    let filtered = apply_zero_phase_gains(x_hat0, terms.gains)?;
    let mut masked_residual = vec![0.0; n];
    let mut cost = 0.0;
    for i in t_ov..n {
        let r = filtered.samples()[i] - terms.y_tilde.samples()[i];
        masked_residual[i] = r;
        cost += r * r;
    }
    let residual_sig = Signal::new(masked_residual, x.sample_rate())?;
    let back = apply_zero_phase_gains(&residual_sig, terms.gains)?;

    let mut cotangent: Vec<f64> = back.samples().iter().map(|v| 2.0 * v).collect();
    if let Some(tail) = terms.prev_tail {
        for (i, &prev) in tail.iter().enumerate() {
            let d = x_hat0.samples()[i] - prev;
            cost += d * d;
            cotangent[i] += 2.0 * d;
        }
    }
    if !cost.is_finite() {
        return Err(Error::numeric(
            "reconstruction cost",
            format!("cost evaluated to {cost}"),
        ));
    }

    let vjp = prior.vjp(x, sigma, &Signal::new(cotangent, x.sample_rate())?)?;
    Ok(CostEval {
        cost,
        gradient: vjp.value,
        vjp_exact: vjp.exact,
    })
}

/// Gradient of the reconstruction cost at x with a freshly
/// noise-regularized observation, as one self-contained operation:
/// draws eps, forms y + gamma eps, denoises x, and differentiates.
pub fn likelihood_gradient(
    y_obs: &Signal,
    x: &Signal,
    sigma: f64,
    filter: &FilterParams,
    prior: &dyn DenoiserPrior,
    cfg: &GuidanceConfig,
    rng: &mut dyn RngCore,
) -> Result<CostEval> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "likelihood gradient needs sigma > 0, got {sigma}"
        )));
    }
    let y_tilde = regularized_observation(y_obs, cfg.noise_reg_gamma, rng)?;
    let n_fft = fft::full_fft_len(x.len());
    let gains = filter.response_gains_for_fft(n_fft, x.sample_rate())?;
    let x_hat0 = prior.denoise(x, sigma)?;
    audio_cost_gradient(
        &AudioCostTerms {
            y_tilde: &y_tilde,
            gains: &gains,
            prev_tail: None,
        },
        x,
        sigma,
        &x_hat0,
        prior,
    )
}

/// y + gamma * fresh standard normal noise (no draw when gamma = 0).
pub fn regularized_observation(
    y: &Signal,
    gamma: f64,
    rng: &mut dyn RngCore,
) -> Result<Signal> {
    if gamma == 0.0 {
        return Ok(y.clone());
    }
    let normal = rand_distr::StandardNormal;
    let samples: Vec<f64> = y
        .samples()
        .iter()
        .map(|&v| v + gamma * <rand_distr::StandardNormal as Distribution<f64>>::sample(&normal, rng))
        .collect();
    Signal::new(samples, y.sample_rate())
}

pub fn l2_norm(signal: &Signal) -> f64 {
    signal.samples().iter().map(|v| v * v).sum::<f64>().sqrt()
}
