//! Parametric magnitude response: piecewise-linear in dB over log2
//! frequency, anchored at 0 dB, with fixed steep band-limit slopes
//! outside the outermost breakpoints.
//!
//! Both breakpoint frequencies and segment slopes are optimizable; the
//! response and its parameter gradients are evaluated analytically so
//! the filter can be fitted by first-order methods without automatic
//! differentiation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;

/// Optimizable slopes are clipped into this range (dB per octave).
pub const SLOPE_LIMIT_DB_PER_OCT: f64 = 40.0;
/// Minimum breakpoint separation enforced by projection (Hz).
pub const MIN_BREAKPOINT_GAP_HZ: f64 = 1.0;
/// Fixed rolloff above the highest breakpoint (dB per octave).
pub const BAND_LIMIT_SLOPE_HIGH: f64 = -80.0;
/// Fixed rolloff below the lowest breakpoint (dB per octave).
pub const BAND_LIMIT_SLOPE_LOW: f64 = 80.0;
/// Lower bound for breakpoint frequencies (Hz).
pub const F_MIN_HZ: f64 = 20.0;

/// Piecewise magnitude response parameters.
///
/// `breakpoints_hz[anchor_index]` is the anchor frequency where the
/// response is exactly 0 dB. `slopes_db_per_oct[k]` is the slope of the
/// segment between breakpoints k and k+1. Below the first breakpoint
/// the response falls at [`BAND_LIMIT_SLOPE_LOW`] toward low
/// frequencies; above the last it falls at [`BAND_LIMIT_SLOPE_HIGH`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFilterParams", into = "RawFilterParams")]
pub struct FilterParams {
    breakpoints_hz: Vec<f64>,
    slopes_db_per_oct: Vec<f64>,
    anchor_index: usize,
    f_min_hz: f64,
    f_max_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawFilterParams {
    breakpoints_hz: Vec<f64>,
    slopes_db_per_oct: Vec<f64>,
    anchor_index: usize,
    f_min_hz: f64,
    f_max_hz: f64,
}

impl From<FilterParams> for RawFilterParams {
    fn from(p: FilterParams) -> Self {
        RawFilterParams {
            breakpoints_hz: p.breakpoints_hz,
            slopes_db_per_oct: p.slopes_db_per_oct,
            anchor_index: p.anchor_index,
            f_min_hz: p.f_min_hz,
            f_max_hz: p.f_max_hz,
        }
    }
}

impl TryFrom<RawFilterParams> for FilterParams {
    type Error = Error;

    fn try_from(raw: RawFilterParams) -> Result<Self> {
        FilterParams::new(
            raw.breakpoints_hz,
            raw.slopes_db_per_oct,
            raw.anchor_index,
            raw.f_min_hz,
            raw.f_max_hz,
        )
    }
}

/// Per-frequency partial derivatives of the response in dB.
#[derive(Debug, Clone)]
pub struct ResponseJacobian {
    /// `wrt_breakpoints[j][i]`: d response(freqs[i]) / d breakpoint j (dB per Hz).
    pub wrt_breakpoints: Vec<Vec<f64>>,
    /// `wrt_slopes[j][i]`: d response(freqs[i]) / d slope j (dB per (dB/oct)).
    pub wrt_slopes: Vec<Vec<f64>>,
}

impl FilterParams {
    pub fn new(
        breakpoints_hz: Vec<f64>,
        slopes_db_per_oct: Vec<f64>,
        anchor_index: usize,
        f_min_hz: f64,
        f_max_hz: f64,
    ) -> Result<Self> {
        let p = FilterParams {
            breakpoints_hz,
            slopes_db_per_oct,
            anchor_index,
            f_min_hz,
            f_max_hz,
        };
        p.validate()?;
        Ok(p)
    }

    /// Default initialization: breakpoints at 50/500/1000/1500/2000 Hz,
    /// all optimizable slopes zero, anchor at 1 kHz. The response is
    /// flat at 0 dB through the passband with the fixed rolloffs
    /// outside, i.e. an initial band limit at 2 kHz.
    pub fn init_default(sample_rate: u32) -> Result<Self> {
        let f_max = default_f_max(sample_rate)?;
        FilterParams::new(
            vec![50.0, 500.0, 1000.0, 1500.0, 2000.0],
            vec![0.0; 4],
            2,
            F_MIN_HZ,
            f_max,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let n = self.breakpoints_hz.len();
        if n == 0 {
            problems.push("at least one breakpoint is required".to_string());
        }
        if self.slopes_db_per_oct.len() + 1 != n.max(1) {
            problems.push(format!(
                "{} breakpoints need {} slopes, got {}",
                n,
                n.max(1) - 1,
                self.slopes_db_per_oct.len()
            ));
        }
        if self.anchor_index >= n.max(1) {
            problems.push(format!(
                "anchor index {} out of range for {} breakpoints",
                self.anchor_index, n
            ));
        }
        if !(self.f_min_hz > 0.0 && self.f_max_hz.is_finite() && self.f_max_hz > self.f_min_hz) {
            problems.push(format!(
                "invalid frequency bounds [{}, {}]",
                self.f_min_hz, self.f_max_hz
            ));
        }
        for (i, &f) in self.breakpoints_hz.iter().enumerate() {
            if !f.is_finite() || f < self.f_min_hz || f > self.f_max_hz {
                problems.push(format!(
                    "breakpoint {i} = {f} Hz outside [{}, {}]",
                    self.f_min_hz, self.f_max_hz
                ));
            }
            if i > 0 && !(f > self.breakpoints_hz[i - 1]) {
                problems.push(format!(
                    "breakpoints must be strictly increasing at index {i} ({} -> {f})",
                    self.breakpoints_hz[i - 1]
                ));
            }
        }
        for (i, &s) in self.slopes_db_per_oct.iter().enumerate() {
            if !s.is_finite() {
                problems.push(format!("slope {i} is not finite"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn breakpoints_hz(&self) -> &[f64] {
        &self.breakpoints_hz
    }

    pub fn slopes_db_per_oct(&self) -> &[f64] {
        &self.slopes_db_per_oct
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    pub fn anchor_hz(&self) -> f64 {
        self.breakpoints_hz[self.anchor_index]
    }

    /// Highest breakpoint: the effective band limit of the passband.
    pub fn band_limit_hz(&self) -> f64 {
        *self.breakpoints_hz.last().unwrap()
    }

    pub fn f_min_hz(&self) -> f64 {
        self.f_min_hz
    }

    pub fn f_max_hz(&self) -> f64 {
        self.f_max_hz
    }

    pub fn n_breakpoints(&self) -> usize {
        self.breakpoints_hz.len()
    }

    pub fn n_params(&self) -> usize {
        self.breakpoints_hz.len() + self.slopes_db_per_oct.len()
    }

    /// Flatten as [breakpoints.., slopes..] for the optimizer.
    pub fn to_param_vec(&self) -> Vec<f64> {
        let mut v = self.breakpoints_hz.clone();
        v.extend_from_slice(&self.slopes_db_per_oct);
        v
    }

    /// Overwrite parameters from an optimizer vector. Ordering and range
    /// feasibility are restored separately by [`FilterParams::project`].
    pub fn set_from_param_vec(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, expected {}",
                v.len(),
                self.n_params()
            )));
        }
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::numeric(
                "set_from_param_vec",
                format!("non-finite parameter {bad}"),
            ));
        }
        let n = self.breakpoints_hz.len();
        self.breakpoints_hz.copy_from_slice(&v[..n]);
        self.slopes_db_per_oct.copy_from_slice(&v[n..]);
        Ok(())
    }

    /// Project onto the feasible set: breakpoints sorted into their
    /// slots, clamped to [f_min, f_max] with at least
    /// [`MIN_BREAKPOINT_GAP_HZ`] between neighbors; slopes clipped to
    /// +-[`SLOPE_LIMIT_DB_PER_OCT`]. Idempotent.
    pub fn project(&mut self) {
        self.breakpoints_hz.sort_by(f64::total_cmp);
        let n = self.breakpoints_hz.len();
        for f in &mut self.breakpoints_hz {
            *f = f.clamp(self.f_min_hz, self.f_max_hz);
        }
        for i in 1..n {
            let lo = self.breakpoints_hz[i - 1] + MIN_BREAKPOINT_GAP_HZ;
            if self.breakpoints_hz[i] < lo {
                self.breakpoints_hz[i] = lo;
            }
        }
        if n > 0 && self.breakpoints_hz[n - 1] > self.f_max_hz {
            self.breakpoints_hz[n - 1] = self.f_max_hz;
            for i in (0..n - 1).rev() {
                let hi = self.breakpoints_hz[i + 1] - MIN_BREAKPOINT_GAP_HZ;
                if self.breakpoints_hz[i] > hi {
                    self.breakpoints_hz[i] = hi;
                }
            }
        }
        for s in &mut self.slopes_db_per_oct {
            *s = s.clamp(-SLOPE_LIMIT_DB_PER_OCT, SLOPE_LIMIT_DB_PER_OCT);
        }
    }

    fn knots_log2(&self) -> Vec<f64> {
        self.breakpoints_hz.iter().map(|f| f.log2()).collect()
    }

    /// Cumulative dB at each knot plus its dense jacobian w.r.t. the
    /// log2 knot positions and the segment slopes.
    fn knot_table(&self) -> KnotTable {
        let n = self.breakpoints_hz.len();
        let a = self.anchor_index;
        let u = self.knots_log2();
        let s = &self.slopes_db_per_oct;
        let mut db = vec![0.0; n];
        let mut d_u = vec![vec![0.0; n]; n];
        let mut d_s = vec![vec![0.0; n - 1]; n];
        for k in a..n - 1 {
            let span = u[k + 1] - u[k];
            db[k + 1] = db[k] + s[k] * span;
            let (head, tail) = d_u.split_at_mut(k + 1);
            tail[0].copy_from_slice(&head[k]);
            tail[0][k + 1] += s[k];
            tail[0][k] -= s[k];
            let (head, tail) = d_s.split_at_mut(k + 1);
            tail[0].copy_from_slice(&head[k]);
            tail[0][k] += span;
        }
        for k in (0..a).rev() {
            let span = u[k + 1] - u[k];
            db[k] = db[k + 1] - s[k] * span;
            let (head, tail) = d_u.split_at_mut(k + 1);
            head[k].copy_from_slice(&tail[0]);
            head[k][k + 1] -= s[k];
            head[k][k] += s[k];
            let (head, tail) = d_s.split_at_mut(k + 1);
            head[k].copy_from_slice(&tail[0]);
            head[k][k] -= span;
        }
        KnotTable { u, db, d_u, d_s }
    }

    /// Response in dB at each frequency (Hz, must be > 0).
    ///
    /// A frequency exactly at a breakpoint belongs to the right-hand
    /// segment.
    pub fn eval_response_db(&self, freqs: &[f64]) -> Result<Vec<f64>> {
        let table = self.knot_table();
        freqs
            .iter()
            .map(|&f| {
                if !(f > 0.0) || !f.is_finite() {
                    return Err(Error::Domain(format!(
                        "response frequency must be positive and finite, got {f}"
                    )));
                }
                Ok(self.eval_one(&table, f.log2()).0)
            })
            .collect()
    }

    /// Returns (response_db, segment) where segment identifies the
    /// active piece: -1 below the lowest knot, n-1 above the highest,
    /// otherwise the left knot index.
    fn eval_one(&self, t: &KnotTable, u_f: f64) -> (f64, isize) {
        let n = t.u.len();
        if u_f < t.u[0] {
            (t.db[0] + BAND_LIMIT_SLOPE_LOW * (u_f - t.u[0]), -1)
        } else if u_f >= t.u[n - 1] {
            (
                t.db[n - 1] + BAND_LIMIT_SLOPE_HIGH * (u_f - t.u[n - 1]),
                n as isize - 1,
            )
        } else {
            let k = t.u.partition_point(|&uk| uk <= u_f) - 1;
            (
                t.db[k] + self.slopes_db_per_oct[k] * (u_f - t.u[k]),
                k as isize,
            )
        }
    }

    /// Analytic partial derivatives of the response at each frequency
    /// with respect to every breakpoint and every optimizable slope.
    ///
    /// Derivatives are one-sided at breakpoint ties (the right-hand
    /// segment's branch); probe frequencies should sit away from
    /// breakpoints when comparing against finite differences.
    pub fn response_param_gradients(&self, freqs: &[f64]) -> Result<ResponseJacobian> {
        let n = self.breakpoints_hz.len();
        let n_s = self.slopes_db_per_oct.len();
        let table = self.knot_table();
        let ln2 = std::f64::consts::LN_2;
        let mut wrt_breakpoints = vec![vec![0.0; freqs.len()]; n];
        let mut wrt_slopes = vec![vec![0.0; freqs.len()]; n_s];
        for (i, &f) in freqs.iter().enumerate() {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::Domain(format!(
                    "response frequency must be positive and finite, got {f}"
                )));
            }
            let u_f = f.log2();
            let (_, seg) = self.eval_one(&table, u_f);
            let (base, extra_u, extra_s): (usize, Option<(usize, f64)>, Option<(usize, f64)>) =
                if seg < 0 {
                    (0, Some((0, -BAND_LIMIT_SLOPE_LOW)), None)
                } else if seg as usize == n - 1 {
                    (n - 1, Some((n - 1, -BAND_LIMIT_SLOPE_HIGH)), None)
                } else {
                    let k = seg as usize;
                    (
                        k,
                        Some((k, -self.slopes_db_per_oct[k])),
                        Some((k, u_f - table.u[k])),
                    )
                };
            for j in 0..n {
                let mut du = table.d_u[base][j];
                if let Some((jj, v)) = extra_u {
                    if jj == j {
                        du += v;
                    }
                }
                wrt_breakpoints[j][i] = du / (self.breakpoints_hz[j] * ln2);
            }
            for j in 0..n_s {
                let mut ds = table.d_s[base][j];
                if let Some((jj, v)) = extra_s {
                    if jj == j {
                        ds += v;
                    }
                }
                wrt_slopes[j][i] = ds;
            }
        }
        Ok(ResponseJacobian {
            wrt_breakpoints,
            wrt_slopes,
        })
    }

    /// Linear gains on the one-sided grid of an FFT of length n_fft.
    /// The DC bin takes gain 0, the limit of the low-side rolloff.
    pub fn response_gains_for_fft(&self, n_fft: usize, sample_rate: u32) -> Result<Vec<f64>> {
        let freqs = fft::onesided_freqs(n_fft, sample_rate);
        let db = self.eval_response_db(&freqs[1..])?;
        let mut gains = Vec::with_capacity(freqs.len());
        gains.push(0.0);
        gains.extend(db.iter().map(|&d| fft::db_to_linear(d)));
        Ok(gains)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::format("filter parameters", e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("filter parameters", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_toml_string()?)
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        Self::from_toml_str(&text)
    }
}

struct KnotTable {
    u: Vec<f64>,
    db: Vec<f64>,
    d_u: Vec<Vec<f64>>,
    d_s: Vec<Vec<f64>>,
}

/// Upper breakpoint bound: Nyquist minus one bin of the magnitude-cost
/// grid (4096-point at 44.1 kHz, 2048-point at 22.05 kHz; the bin width
/// is identical at both rates).
pub fn default_f_max(sample_rate: u32) -> Result<f64> {
    let n_fft = match sample_rate {
        44100 => 4096.0,
        22050 => 2048.0,
        other => {
            return Err(Error::Config(format!(
                "unsupported sample rate {other} (expected 22050 or 44100)"
            )))
        }
    };
    let sr = sample_rate as f64;
    Ok(sr / 2.0 - sr / n_fft)
}

/// Breakpoint-crowding regularization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BcrConfig {
    /// Decay rate of the penalty with gap width (per Hz).
    pub beta: f64,
    /// Weight of the penalty in the total filter cost.
    pub weight: f64,
}

impl Default for BcrConfig {
    fn default() -> Self {
        BcrConfig {
            beta: 0.1,
            weight: 10.0,
        }
    }
}

/// Breakpoint-crowding cost and its gradient w.r.t. each breakpoint.
///
/// Penalizes small gaps between adjacent breakpoints and between the
/// outermost breakpoints and the [f_min, f_max] bounds:
/// exp(-beta * gap) summed over all gaps.
pub fn bcr_cost(params: &FilterParams, beta: f64) -> (f64, Vec<f64>) {
    let bk = params.breakpoints_hz();
    let n = bk.len();
    let mut cost = 0.0;
    let mut grad = vec![0.0; n];

    let low = (-beta * (bk[0] - params.f_min_hz())).exp();
    cost += low;
    grad[0] += -beta * low;

    for i in 0..n - 1 {
        let pair = (-beta * (bk[i + 1] - bk[i])).exp();
        cost += pair;
        grad[i] += beta * pair;
        grad[i + 1] += -beta * pair;
    }

    let high = (-beta * (params.f_max_hz() - bk[n - 1])).exp();
    cost += high;
    grad[n - 1] += beta * high;

    (cost, grad)
}
