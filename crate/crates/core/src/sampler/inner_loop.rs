//! Per-step filter estimation: Adam on the weighted spectral-magnitude
//! mismatch between the observations and the filtered clean estimate,
//! with projection after every step.

use crate::error::{Error, Result};
use crate::fft::db_to_linear;
use crate::filter::{bcr_cost, BcrConfig, FilterParams};
use crate::optim::{AdamConfig, AdamState};
use crate::sampler::guidance::{magnitude_weights, SpectralWeighting};
use crate::signal::{stft, Signal, StftConfig};

#[derive(Debug, Clone)]
pub struct InnerLoopConfig {
    /// Adam iterations per sampler step. Zero freezes the filter.
    pub iterations_per_step: usize,
    pub adam: AdamConfig,
    pub bcr: BcrConfig,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        InnerLoopConfig {
            iterations_per_step: 100,
            adam: AdamConfig::default(),
            bcr: BcrConfig::default(),
        }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        let mut problems = Vec::new();
        if !(self.bcr.beta > 0.0) || !self.bcr.beta.is_finite() {
            problems.push(format!(
                "gap penalty decay rate must be positive and finite, got {}",
                self.bcr.beta
            ));
        }
        if !(self.bcr.weight >= 0.0) || !self.bcr.weight.is_finite() {
            problems.push(format!(
                "gap penalty weight must be non-negative and finite, got {}",
                self.bcr.weight
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Per-bin sufficient statistics of the magnitude cost. For gains g_k
/// the data cost is sum_k W_k^2 (sum_yy - 2 g_k sum_yx + g_k^2 sum_xx),
/// which equals the frame-by-frame weighted magnitude mismatch exactly,
/// so the filter loop never re-reads the signals.
#[derive(Debug, Clone)]
pub struct MagnitudeStats {
    freqs: Vec<f64>,
    sum_xx: Vec<f64>,
    sum_yx: Vec<f64>,
    sum_yy: Vec<f64>,
    num_frames: usize,
}

impl MagnitudeStats {
    /// STFT both signals and accumulate per-bin statistics over frames
    /// (the DC bin is excluded). With `keep_range` set, only frames
    /// lying entirely inside the sample interval [lo, hi) contribute —
    /// the frame-level form of a time mask on the cost.
    pub fn compute(
        y: &Signal,
        x_hat0: &Signal,
        cfg: StftConfig,
        keep_range: Option<(usize, usize)>,
    ) -> Result<Self> {
        if y.len() != x_hat0.len() || y.sample_rate() != x_hat0.sample_rate() {
            return Err(Error::Shape(format!(
                "observation ({} @ {} Hz) and clean estimate ({} @ {} Hz) disagree",
                y.len(),
                y.sample_rate(),
                x_hat0.len(),
                x_hat0.sample_rate()
            )));
        }
        let spec_y = stft(y, cfg)?;
        let spec_x = stft(x_hat0, cfg)?;
        let n_bins = cfg.window_size() / 2;
        let hop = cfg.hop();
        let window = cfg.window_size();

        let mut stats = MagnitudeStats {
            freqs: (1..=n_bins)
                .map(|k| cfg.bin_freq(k, y.sample_rate()))
                .collect(),
            sum_xx: vec![0.0; n_bins],
            sum_yx: vec![0.0; n_bins],
            sum_yy: vec![0.0; n_bins],
            num_frames: 0,
        };
        for (t, (fy, fx)) in spec_y.frames.iter().zip(&spec_x.frames).enumerate() {
            if let Some((lo, hi)) = keep_range {
                let start = t * hop;
                if start < lo || start + window > hi {
                    continue;
                }
            }
            stats.num_frames += 1;
            for k in 1..=n_bins {
                let my = fy[k].norm();
                let mx = fx[k].norm();
                stats.sum_xx[k - 1] += mx * mx;
                stats.sum_yx[k - 1] += my * mx;
                stats.sum_yy[k - 1] += my * my;
            }
        }
        if stats.num_frames == 0 {
            return Err(Error::InputSize(
                "no STFT frames fall inside the unmasked region".into(),
            ));
        }
        Ok(stats)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }
}

/// Total cost (weighted magnitude mismatch + weighted gap penalty) and
/// its analytic gradient in the packed parameter order (breakpoints,
/// then slopes).
pub fn filter_cost_and_gradient(
    params: &FilterParams,
    stats: &MagnitudeStats,
    weights: &[f64],
    bcr: &BcrConfig,
) -> Result<(f64, Vec<f64>)> {
    let k_bins = stats.freqs.len();
    if weights.len() != k_bins {
        return Err(Error::Shape(format!(
            "{} weights for {} bins",
            weights.len(),
            k_bins
        )));
    }
    let response = params.eval_response_db(&stats.freqs)?;
    let jac = params.response_param_gradients(&stats.freqs)?;
    let n_bk = params.n_breakpoints();
    let n_params = params.n_params();

    let ln10_over_20 = std::f64::consts::LN_10 / 20.0;
    let mut cost = 0.0;
    let mut grad = vec![0.0; n_params];
    for k in 0..k_bins {
        let w2 = weights[k] * weights[k];
        let g = db_to_linear(response[k]);
        cost += w2 * (stats.sum_yy[k] - 2.0 * g * stats.sum_yx[k] + g * g * stats.sum_xx[k]);
        // d cost / d response_dB at bin k.
        let dc_dr =
            w2 * 2.0 * (g * stats.sum_xx[k] - stats.sum_yx[k]) * g * ln10_over_20;
        for j in 0..n_bk {
            grad[j] += dc_dr * jac.wrt_breakpoints[j][k];
        }
        for j in 0..n_bk - 1 {
            grad[n_bk + j] += dc_dr * jac.wrt_slopes[j][k];
        }
    }

    if bcr.weight != 0.0 {
        let (gap_cost, gap_grad) = bcr_cost(params, bcr.beta);
        cost += bcr.weight * gap_cost;
        for (g, gg) in grad.iter_mut().zip(&gap_grad) {
            *g += bcr.weight * gg;
        }
    }

    if !cost.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric(
            "filter cost",
            "non-finite cost or gradient".to_string(),
        ));
    }
    Ok((cost, grad))
}

/// Report of one inner-loop run. `costs[j]` is the cost evaluated at
/// the parameters entering iteration j; `final_cost` is evaluated at
/// the returned (projected) parameters.
#[derive(Debug, Clone)]
pub struct InnerLoopReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub costs: Vec<f64>,
    pub iterations: usize,
}

/// Filter parameters plus the Adam state that optimizes them. The
/// moments persist across sampler steps (and across blocks when the
/// filter is carried), so the optimizer keeps its adapted per-parameter
/// step sizes as the clean estimate evolves.
#[derive(Debug, Clone)]
pub struct FilterEstimator {
    params: FilterParams,
    adam: AdamState,
    cfg: InnerLoopConfig,
}

impl FilterEstimator {
    pub fn new(initial: FilterParams, cfg: InnerLoopConfig) -> Result<Self> {
        cfg.validate()?;
        initial.validate()?;
        let adam = AdamState::new(cfg.adam.clone(), initial.n_params())?;
        Ok(FilterEstimator {
            params: initial,
            adam,
            cfg,
        })
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn config(&self) -> &InnerLoopConfig {
        &self.cfg
    }

    /// Replace the parameters and zero the optimizer moments.
    pub fn reset(&mut self, params: FilterParams) -> Result<()> {
        params.validate()?;
        self.adam = AdamState::new(self.cfg.adam.clone(), params.n_params())?;
        self.params = params;
        Ok(())
    }

    /// Run `iterations` Adam steps against fixed statistics, projecting
    /// after every step. Aborts when the cost exceeds a million times
    /// its initial value.
    pub fn run(
        &mut self,
        stats: &MagnitudeStats,
        weights: &[f64],
        iterations: usize,
    ) -> Result<InnerLoopReport> {
        let (initial_cost, _) =
            filter_cost_and_gradient(&self.params, stats, weights, &self.cfg.bcr)?;
        let divergence_limit = 1e6 * initial_cost.max(1e-12);
        let mut costs = Vec::with_capacity(iterations);
        for j in 0..iterations {
            let (cost, grad) =
                filter_cost_and_gradient(&self.params, stats, weights, &self.cfg.bcr)?;
            if cost > divergence_limit {
                return Err(Error::numeric(
                    "filter inner loop",
                    format!(
                        "cost diverged at iteration {j}: {cost:e} from initial {initial_cost:e}"
                    ),
                ));
            }
            costs.push(cost);
            let mut vec = self.params.to_param_vec();
            self.adam.step(&mut vec, &grad)?;
            self.params.set_from_param_vec(&vec)?;
            self.params.project();
        }
        let (final_cost, _) =
            filter_cost_and_gradient(&self.params, stats, weights, &self.cfg.bcr)?;
        Ok(InnerLoopReport {
            initial_cost,
            final_cost,
            costs,
            iterations,
        })
    }
}

/// One full inner-loop optimization as a standalone operation: builds
/// statistics over all frames, derives the weights from the
/// observations, and runs a fresh optimizer for the configured number
/// of iterations.
pub fn filter_inner_loop(
    y_obs: &Signal,
    x_hat0: &Signal,
    initial: &FilterParams,
    cfg: &InnerLoopConfig,
    weighting: SpectralWeighting,
) -> Result<(FilterParams, InnerLoopReport)> {
    let stft_cfg = StftConfig::for_sample_rate(y_obs.sample_rate())?;
    let stats = MagnitudeStats::compute(y_obs, x_hat0, stft_cfg, None)?;
    let weights = magnitude_weights(y_obs, stft_cfg, weighting)?;
    let mut estimator = FilterEstimator::new(initial.clone(), cfg.clone())?;
    let report = estimator.run(&stats, &weights, cfg.iterations_per_step)?;
    Ok((estimator.params().clone(), report))
}
