//! Posterior-guided diffusion restoration.
//!
//! The driver walks a decreasing noise schedule. At each level it
//! denoises the current state, re-estimates the degradation filter
//! against the (noise-regularized) observations, forms an observation
//! guidance term, and takes an Euler or Heun step along the combined
//! prior-plus-guidance direction. Long recordings are restored as
//! overlapping blocks, each constrained to the previous block's
//! restored tail.

pub mod guidance;
pub mod inner_loop;
pub mod schedule;

pub use guidance::{
    audio_cost_gradient, guidance_scale, likelihood_gradient, magnitude_weights, AudioCostTerms,
    CostEval, GuidanceConfig, RestoreMode, SpectralWeighting,
};
pub use inner_loop::{
    filter_cost_and_gradient, filter_inner_loop, FilterEstimator, InnerLoopConfig,
    InnerLoopReport, MagnitudeStats,
};
pub use schedule::NoiseSchedule;

use rand::RngCore;
use rand_distr::Distribution;

use crate::denoiser::DenoiserPrior;
use crate::error::{Error, Result};
use crate::fft;
use crate::filter::FilterParams;
use crate::ltas::{apply_inverse_eq, compute_ltas, ltas_eq_filter, LtasProfile};
use crate::signal::{Signal, StftConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerOrder {
    /// First-order update; the reference for analytic oracles.
    Euler,
    /// Heun's second-order correction: the denoiser and guidance are
    /// re-evaluated at the Euler proposal and the two slopes averaged.
    Heun,
}

/// Everything one restoration run needs besides the data and the prior.
#[derive(Debug, Clone)]
pub struct RestoreSettings {
    pub schedule: NoiseSchedule,
    pub guidance: GuidanceConfig,
    pub inner: InnerLoopConfig,
    pub order: SamplerOrder,
    /// Starting filter; the per-sample-rate default when absent.
    pub initial_filter: Option<FilterParams>,
}

impl RestoreSettings {
    pub fn validate(&self) -> Result<()> {
        self.guidance.validate()?;
        self.inner.validate()?;
        if let Some(f) = &self.initial_filter {
            f.validate()?;
        }
        Ok(())
    }
}

/// Defaults tuned for solo piano material.
pub fn piano_settings() -> RestoreSettings {
    RestoreSettings {
        schedule: NoiseSchedule::build(0.5, 4e-5, 13.0, 51)
            .and_then(|s| s.with_churn(10.0))
            .expect("piano schedule constants are valid"),
        guidance: GuidanceConfig {
            xi_prime: 1.0,
            noise_reg_gamma: 0.25,
            mode: RestoreMode::Plain,
            weighting: SpectralWeighting::InverseMagnitude,
        },
        inner: InnerLoopConfig::default(),
        order: SamplerOrder::Heun,
        initial_filter: None,
    }
}

/// Defaults tuned for singing-voice material.
pub fn vocals_settings() -> RestoreSettings {
    RestoreSettings {
        schedule: NoiseSchedule::build(10.0, 1e-3, 13.0, 51)
            .and_then(|s| s.with_churn(10.0))
            .expect("vocals schedule constants are valid"),
        guidance: GuidanceConfig {
            xi_prime: 0.5,
            noise_reg_gamma: 1.0,
            mode: RestoreMode::Plain,
            weighting: SpectralWeighting::InverseMagnitude,
        },
        inner: InnerLoopConfig::default(),
        order: SamplerOrder::Heun,
        initial_filter: None,
    }
}

/// Per-step diagnostics recorded during a run.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub step: usize,
    /// Noise level actually stepped from (after churn inflation).
    pub sigma: f64,
    pub filter_cost_before: f64,
    pub filter_cost_after: f64,
    pub audio_cost: f64,
    pub guidance_scale: f64,
    pub guidance_zero: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub steps: Vec<StepTrace>,
}

impl RunTrace {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(
            "step,sigma,filter_cost_before,filter_cost_after,audio_cost,guidance_scale,guidance_zero\n",
        );
        for s in &self.steps {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{}\n",
                s.step,
                s.sigma,
                s.filter_cost_before,
                s.filter_cost_after,
                s.audio_cost,
                s.guidance_scale,
                s.guidance_zero as u8
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SegmentResult {
    pub restored: Signal,
    pub filter: FilterParams,
    pub trace: RunTrace,
}

/// Long-recording blocking parameters.
#[derive(Debug, Clone)]
pub struct BlockArConfig {
    pub segment_seconds: f64,
    /// Fraction of each block constrained to the previous block's
    /// restored tail.
    pub overlap_fraction: f64,
    /// When false, blocks after the first run with the filter frozen.
    pub reestimate_filter_per_block: bool,
    /// When false, every block restarts from the initial filter and
    /// fresh optimizer moments instead of carrying them over.
    pub carry_filter_across_blocks: bool,
}

impl Default for BlockArConfig {
    fn default() -> Self {
        BlockArConfig {
            segment_seconds: 5.0,
            overlap_fraction: 0.10,
            reestimate_filter_per_block: true,
            carry_filter_across_blocks: true,
        }
    }
}

impl BlockArConfig {
    /// Samples per block for a recording of the given length; every
    /// block of a run has this length, so it also fixes the FFT grid a
    /// spectral prior must live on.
    pub fn block_len(&self, recording_len: usize, sample_rate: u32) -> usize {
        ((self.segment_seconds * sample_rate as f64).round() as usize).min(recording_len)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.segment_seconds > 0.0) || !self.segment_seconds.is_finite() {
            problems.push(format!(
                "segment length must be positive, got {} s",
                self.segment_seconds
            ));
        }
        if !(self.overlap_fraction > 0.0 && self.overlap_fraction < 0.5) {
            problems.push(format!(
                "overlap fraction must lie in (0, 0.5), got {}",
                self.overlap_fraction
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecordingResult {
    pub restored: Signal,
    pub block_filters: Vec<FilterParams>,
    pub block_traces: Vec<RunTrace>,
}

fn draw_standard_normal(rng: &mut dyn RngCore, n: usize) -> Vec<f64> {
    let normal = rand_distr::StandardNormal;
    (0..n)
        .map(|_| <rand_distr::StandardNormal as Distribution<f64>>::sample(&normal, rng))
        .collect()
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::Numeric { stage, detail } => Error::Numeric {
            stage: format!("step {step}: {stage}"),
            detail,
        },
        other => Error::numeric(format!("step {step}"), other.to_string()),
    }
}

/// Spectrum-matched version of the observations against a reference
/// profile; None when the mode does not call for one.
fn equalized_observation(
    y: &Signal,
    mode: RestoreMode,
    ltas_ref: Option<&LtasProfile>,
) -> Result<Option<Signal>> {
    if mode == RestoreMode::Plain {
        return Ok(None);
    }
    let reference = ltas_ref.ok_or_else(|| {
        Error::Config("this restore mode needs a reference spectrum profile".into())
    })?;
    let cfg = StftConfig::for_sample_rate(y.sample_rate())?;
    let input_profile = compute_ltas(y, cfg)?;
    let h = ltas_eq_filter(&input_profile, reference)?;
    Ok(Some(apply_inverse_eq(y, &h, &input_profile)?))
}

/// The core loop over one segment. `y_eq` must be present for the
/// spectrum-matched modes; `prev_tail`, when set, constrains the head
/// of the segment and removes it from the filter-fit region.
fn run_segment(
    y: &Signal,
    y_eq: Option<&Signal>,
    prev_tail: Option<&[f64]>,
    prior: &dyn DenoiserPrior,
    settings: &RestoreSettings,
    estimator: &mut FilterEstimator,
    rng: &mut dyn RngCore,
) -> Result<(Signal, RunTrace)> {
    let n = y.len();
    let sr = y.sample_rate();
    let stft_cfg = StftConfig::for_sample_rate(sr)?;
    if n < stft_cfg.window_size() {
        return Err(Error::InputSize(format!(
            "segment of {n} samples is shorter than the {} analysis window",
            stft_cfg.window_size()
        )));
    }
    if let Some(eq) = y_eq {
        if eq.len() != n {
            return Err(Error::Shape(format!(
                "equalized observation length {} does not match segment length {n}",
                eq.len()
            )));
        }
    }

    // Which signal the costs see, and which one seeds the start state.
    let mode = settings.guidance.mode;
    let needs_eq = mode != RestoreMode::Plain;
    if needs_eq && y_eq.is_none() {
        return Err(Error::Config(
            "this restore mode needs the equalized observations".into(),
        ));
    }
    let y_cost: &Signal = match mode {
        RestoreMode::Plain | RestoreMode::LtasInit => y,
        RestoreMode::LtasObjective => y_eq.unwrap(),
    };
    let warm: &Signal = match mode {
        RestoreMode::Plain => y,
        RestoreMode::LtasInit | RestoreMode::LtasObjective => y_eq.unwrap(),
    };

    let weights = magnitude_weights(y_cost, stft_cfg, settings.guidance.weighting)?;
    let n_fft = fft::full_fft_len(n);
    let keep_range = prev_tail.map(|t| (t.len(), n));
    let gamma = settings.guidance.noise_reg_gamma;
    let xi_prime = settings.guidance.xi_prime;
    let iterations = settings.inner.iterations_per_step;

    let sigmas = settings.schedule.extended();
    let churn = settings.schedule.churn_factor();

    let sigma_start = settings.schedule.sigma_start();
    let init_noise = draw_standard_normal(rng, n);
    let mut x: Vec<f64> = warm
        .samples()
        .iter()
        .zip(&init_noise)
        .map(|(&w, &e)| w + sigma_start * e)
        .collect();

    let mut trace = RunTrace::default();
    let num_steps = settings.schedule.num_steps();
    for j in 0..num_steps {
        let step = |e| at_step(j, e);
        let sigma = sigmas[j];
        let sigma_next = sigmas[j + 1];

        // Churn: inflate the noise level and inject matching noise.
        let sigma_hat = if churn > 0.0 {
            let inflated = sigma * (1.0 + churn);
            let extra = (inflated * inflated - sigma * sigma).sqrt();
            let eps = draw_standard_normal(rng, n);
            for (xi, e) in x.iter_mut().zip(&eps) {
                *xi += extra * e;
            }
            inflated
        } else {
            sigma
        };

        let x_sig = Signal::new(x.clone(), sr).map_err(step)?;
        let x_hat0 = prior.denoise(&x_sig, sigma_hat).map_err(step)?;

        // Noise-regularized observations, drawn once per step and
        // shared by the filter fit and the guidance below.
        let y_tilde = if gamma > 0.0 {
            guidance::regularized_observation(y_cost, gamma, rng).map_err(step)?
        } else {
            y_cost.clone()
        };

        let stats =
            MagnitudeStats::compute(&y_tilde, &x_hat0, stft_cfg, keep_range).map_err(step)?;
        let report = estimator.run(&stats, &weights, iterations).map_err(step)?;

        let gains = estimator
            .params()
            .response_gains_for_fft(n_fft, sr)
            .map_err(step)?;
        let terms = AudioCostTerms {
            y_tilde: &y_tilde,
            gains: &gains,
            prev_tail,
        };
        let eval = audio_cost_gradient(&terms, &x_sig, sigma_hat, &x_hat0, prior).map_err(step)?;
        let grad_norm = guidance::l2_norm(&eval.gradient);
        let (xi, zero_grad) = guidance_scale(xi_prime, sigma_hat, grad_norm, n).map_err(step)?;

        let dt = sigma_next - sigma_hat;
        let slope: Vec<f64> = x
            .iter()
            .zip(x_hat0.samples())
            .zip(eval.gradient.samples())
            .map(|((&xi_s, &x0), &g)| {
                let score = (x0 - xi_s) / (sigma_hat * sigma_hat) - xi * g;
                -sigma_hat * score
            })
            .collect();
        let mut x_next: Vec<f64> = x.iter().zip(&slope).map(|(&xi_s, &d)| xi_s + dt * d).collect();

        if settings.order == SamplerOrder::Heun && sigma_next > 0.0 {
            let x_next_sig = Signal::new(x_next.clone(), sr).map_err(step)?;
            let x_hat0_b = prior.denoise(&x_next_sig, sigma_next).map_err(step)?;
            let eval_b =
                audio_cost_gradient(&terms, &x_next_sig, sigma_next, &x_hat0_b, prior)
                    .map_err(step)?;
            let (xi_b, _) = guidance_scale(
                xi_prime,
                sigma_next,
                guidance::l2_norm(&eval_b.gradient),
                n,
            )
            .map_err(step)?;
            x_next = x
                .iter()
                .zip(&slope)
                .zip(x_next_sig.samples())
                .zip(x_hat0_b.samples())
                .zip(eval_b.gradient.samples())
                .map(|((((&xi_s, &d), &xn), &x0b), &gb)| {
                    let score_b = (x0b - xn) / (sigma_next * sigma_next) - xi_b * gb;
                    let d_b = -sigma_next * score_b;
                    xi_s + dt * 0.5 * (d + d_b)
                })
                .collect();
        }

        trace.steps.push(StepTrace {
            step: j,
            sigma: sigma_hat,
            filter_cost_before: report.initial_cost,
            filter_cost_after: report.final_cost,
            audio_cost: eval.cost,
            guidance_scale: xi,
            guidance_zero: zero_grad,
        });
        x = x_next;
    }

    let restored = Signal::new(x, sr)
        .map_err(|e| Error::numeric("final state", e.to_string()))?;
    let warm_rms = warm.rms();
    if warm_rms > 0.0 {
        let ratio = restored.rms() / warm_rms;
        if !(0.1..=10.0).contains(&ratio) {
            return Err(Error::numeric(
                "energy sanity",
                format!("restored RMS is {ratio:.3e} times the starting observation RMS"),
            ));
        }
    }
    Ok((restored, trace))
}

/// Restore one segment. The reference profile is required by the
/// spectrum-matched modes and ignored otherwise.
pub fn restore_segment(
    y: &Signal,
    prior: &dyn DenoiserPrior,
    settings: &RestoreSettings,
    ltas_ref: Option<&LtasProfile>,
    rng: &mut dyn RngCore,
) -> Result<SegmentResult> {
    settings.validate()?;
    let y_eq = equalized_observation(y, settings.guidance.mode, ltas_ref)?;
    let initial = match &settings.initial_filter {
        Some(f) => f.clone(),
        None => FilterParams::init_default(y.sample_rate())?,
    };
    let mut estimator = FilterEstimator::new(initial, settings.inner.clone())?;
    let (restored, trace) = run_segment(
        y,
        y_eq.as_ref(),
        None,
        prior,
        settings,
        &mut estimator,
        rng,
    )?;
    Ok(SegmentResult {
        restored,
        filter: estimator.params().clone(),
        trace,
    })
}

/// Block starts covering [0, len) with blocks of `block_len` samples
/// every `stride`; the last block is pulled back so it ends exactly at
/// `len`.
fn block_starts(len: usize, block_len: usize, stride: usize) -> Vec<usize> {
    if block_len >= len {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut s = 0;
    while s + block_len < len {
        starts.push(s);
        s += stride;
    }
    let last = len - block_len;
    if *starts.last().unwrap() < last {
        starts.push(last);
    }
    starts
}

/// Restore a full recording block-autoregressively: each block after
/// the first is constrained to reproduce the previous block's restored
/// tail over the overlap region, and overlapping outputs are blended
/// with a linear crossfade.
pub fn restore_recording(
    y: &Signal,
    prior: &dyn DenoiserPrior,
    settings: &RestoreSettings,
    ltas_ref: Option<&LtasProfile>,
    block_cfg: &BlockArConfig,
    rng: &mut dyn RngCore,
) -> Result<RecordingResult> {
    settings.validate()?;
    block_cfg.validate()?;
    let sr = y.sample_rate();
    let len = y.len();
    let stft_cfg = StftConfig::for_sample_rate(sr)?;

    let block_len = block_cfg.block_len(len, sr);
    if block_len < stft_cfg.window_size() {
        return Err(Error::Config(format!(
            "block length of {block_len} samples is shorter than the {} analysis window",
            stft_cfg.window_size()
        )));
    }
    let overlap = ((block_len as f64 * block_cfg.overlap_fraction).round() as usize).max(1);
    let stride = block_len - overlap;

    // One spectrum-matched equalization of the whole recording; blocks
    // slice it so every block sees a consistent correction.
    let y_eq_full = equalized_observation(y, settings.guidance.mode, ltas_ref)?;

    let initial = match &settings.initial_filter {
        Some(f) => f.clone(),
        None => FilterParams::init_default(sr)?,
    };
    let mut estimator = FilterEstimator::new(initial.clone(), settings.inner.clone())?;

    let starts = block_starts(len, block_len, stride);
    let mut out = vec![0.0f64; len];
    let mut block_filters = Vec::with_capacity(starts.len());
    let mut block_traces = Vec::with_capacity(starts.len());
    let mut prev_end = 0usize;

    for (k, &start) in starts.iter().enumerate() {
        let end = start + block_len;
        let y_block = Signal::new(y.samples()[start..end].to_vec(), sr)?;
        let y_eq_block = match &y_eq_full {
            Some(eq) => Some(Signal::new(eq.samples()[start..end].to_vec(), sr)?),
            None => None,
        };

        if k > 0 && !block_cfg.carry_filter_across_blocks {
            estimator.reset(initial.clone())?;
        }
        let mut block_settings = settings.clone();
        if k > 0 && !block_cfg.reestimate_filter_per_block {
            block_settings.inner.iterations_per_step = 0;
        }

        let t_ov = if k == 0 { 0 } else { prev_end - start };
        let tail_owned: Option<Vec<f64>> =
            (t_ov > 0).then(|| out[start..start + t_ov].to_vec());

        let (restored, trace) = run_segment(
            &y_block,
            y_eq_block.as_ref(),
            tail_owned.as_deref(),
            prior,
            &block_settings,
            &mut estimator,
            rng,
        )
        .map_err(|e| match e {
            Error::Numeric { stage, detail } => Error::Numeric {
                stage: format!("block {k}: {stage}"),
                detail,
            },
            other => other,
        })?;

        for (i, &v) in restored.samples().iter().enumerate() {
            if i < t_ov {
                let w = i as f64 / t_ov as f64;
                out[start + i] = (1.0 - w) * out[start + i] + w * v;
            } else {
                out[start + i] = v;
            }
        }
        block_filters.push(estimator.params().clone());
        block_traces.push(trace);
        prev_end = end;
    }

    Ok(RecordingResult {
        restored: Signal::new(out, sr)?,
        block_filters,
        block_traces,
    })
}
