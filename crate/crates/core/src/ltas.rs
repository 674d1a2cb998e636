//! Long-term average spectrum estimation and the matching equalizer.
//!
//! An LTAS profile is the per-bin mean STFT power of a recording,
//! Gaussian-smoothed over log2 frequency with a third-octave FWHM.
//! Profiles drive three things: the LTAS-EQ baseline (match a
//! degraded input's spectrum to a reference), an evaluation distance,
//! and Gaussian PSD priors estimated from reference corpora.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::{hann_periodic, stft, Signal, StftConfig};

/// Smoothing kernel FWHM in octaves.
pub const SMOOTHING_FWHM_OCTAVES: f64 = 1.0 / 3.0;
/// EQ gains are floored at this level.
pub const EQ_FLOOR_DB: f64 = -20.0;
/// Distances are floored at this level.
pub const DISTANCE_FLOOR_DB: f64 = -60.0;
/// Relative power floor applied before ratios and distances.
pub const POWER_EPS_REL: f64 = 1e-12;

fn smoothing_sigma_octaves() -> f64 {
    SMOOTHING_FWHM_OCTAVES / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Smoothed long-term average power spectrum on the positive STFT bins
/// (the DC bin is excluded from the grid entirely).
#[derive(Debug, Clone, PartialEq)]
pub struct LtasProfile {
    freqs_hz: Vec<f64>,
    power: Vec<f64>,
    sample_rate: u32,
    window_size: usize,
}

/// Unsmoothed per-bin power sums plus the frame count, the mergeable
/// piece of a corpus computation.
#[derive(Debug, Clone)]
pub struct LtasPartial {
    power_sum: Vec<f64>,
    num_frames: usize,
    sample_rate: u32,
    window_size: usize,
}

impl LtasPartial {
    pub fn from_signal(signal: &Signal, config: StftConfig) -> Result<Self> {
        let spec = stft(signal, config)?;
        let n_bins = config.n_bins();
        let mut power_sum = vec![0.0; n_bins - 1];
        for frame in &spec.frames {
            for k in 1..n_bins {
                power_sum[k - 1] += frame[k].norm_sqr();
            }
        }
        Ok(LtasPartial {
            power_sum,
            num_frames: spec.num_frames(),
            sample_rate: signal.sample_rate(),
            window_size: config.window_size(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    fn merge_into(&self, acc: &mut Vec<f64>, frames: &mut usize) -> Result<()> {
        if acc.is_empty() {
            *acc = vec![0.0; self.power_sum.len()];
        }
        if acc.len() != self.power_sum.len() {
            return Err(Error::Shape(
                "corpus files must share one STFT grid".into(),
            ));
        }
        for (a, p) in acc.iter_mut().zip(&self.power_sum) {
            *a += p;
        }
        *frames += self.num_frames;
        Ok(())
    }
}

impl LtasProfile {
    /// Construct directly from grid values (deserialization, synthetic
    /// profiles in tests).
    pub fn from_parts(
        freqs_hz: Vec<f64>,
        power: Vec<f64>,
        sample_rate: u32,
        window_size: usize,
    ) -> Result<Self> {
        if freqs_hz.len() != power.len() || freqs_hz.is_empty() {
            return Err(Error::Shape(format!(
                "profile needs matching non-empty grids, got {} freqs / {} powers",
                freqs_hz.len(),
                power.len()
            )));
        }
        for w in freqs_hz.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain(
                    "profile frequencies must be strictly increasing".into(),
                ));
            }
        }
        if freqs_hz[0] <= 0.0 {
            return Err(Error::Domain("profile frequencies must be positive".into()));
        }
        if let Some(bad) = power.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Domain(format!(
                "profile power must be finite and non-negative, got {bad}"
            )));
        }
        Ok(LtasProfile {
            freqs_hz,
            power,
            sample_rate,
            window_size,
        })
    }

    pub fn freqs_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn power(&self) -> &[f64] {
        &self.power
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn same_grid(&self, other: &LtasProfile) -> bool {
        self.sample_rate == other.sample_rate
            && self.window_size == other.window_size
            && self.freqs_hz.len() == other.freqs_hz.len()
    }

    fn from_accumulated(
        power_sum: &[f64],
        num_frames: usize,
        sample_rate: u32,
        window_size: usize,
    ) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::InputSize("no STFT frames to average".into()));
        }
        let mean: Vec<f64> = power_sum
            .iter()
            .map(|&p| p / num_frames as f64)
            .collect();
        let freqs: Vec<f64> = (1..=window_size / 2)
            .map(|k| k as f64 * sample_rate as f64 / window_size as f64)
            .collect();
        let smoothed = smooth_log2(&freqs, &mean);
        LtasProfile::from_parts(freqs, smoothed, sample_rate, window_size)
    }

    /// Resample the profile onto the one-sided grid of an n_fft-point
    /// transform and convert to the per-bin PSD normalization in which
    /// unit-variance white noise is 1 (dividing out the analysis window
    /// energy).
    pub fn to_psd(&self, n_fft: usize) -> Result<Vec<f64>> {
        let window = hann_periodic(self.window_size);
        let win_energy: f64 = window.iter().map(|w| w * w).sum();
        let max_p = self.power.iter().cloned().fold(0.0f64, f64::max);
        let floor = POWER_EPS_REL * max_p;
        let src_db: Vec<f64> = self
            .power
            .iter()
            .map(|&p| 10.0 * (p.max(floor).max(1e-300)).log10())
            .collect();
        let dst_f = fft::onesided_freqs(n_fft, self.sample_rate);
        let db = interp_log2_db(&self.freqs_hz, &src_db, &dst_f);
        Ok(db
            .iter()
            .map(|&d| 10f64.powf(d / 10.0) / win_energy)
            .collect())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("freq_hz,power\n");
        for (f, p) in self.freqs_hz.iter().zip(&self.power) {
            out.push_str(&format!("{f:.6},{p:e}\n"));
        }
        out
    }

    pub fn from_csv_str(text: &str, sample_rate: u32, window_size: usize) -> Result<Self> {
        let mut freqs = Vec::new();
        let mut power = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("freq_hz")) {
                continue;
            }
            let mut parts = line.split(',');
            let f = parts
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format("ltas csv", format!("bad frequency on line {}", i + 1)))?;
            let p = parts
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format("ltas csv", format!("bad power on line {}", i + 1)))?;
            freqs.push(f);
            power.push(p);
        }
        LtasProfile::from_parts(freqs, power, sample_rate, window_size)
    }

    /// Write the binary cache: magic, version, key, grid metadata, bins.
    pub fn save_cache(&self, path: impl AsRef<Path>, key: u64) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        buf.extend_from_slice(b"GELT");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&key.to_le_bytes());
        buf.extend_from_slice(&self.sample_rate.to_le_bytes());
        buf.extend_from_slice(&(self.window_size as u32).to_le_bytes());
        buf.extend_from_slice(&(self.freqs_hz.len() as u32).to_le_bytes());
        for (f, p) in self.freqs_hz.iter().zip(&self.power) {
            buf.extend_from_slice(&f.to_le_bytes());
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(&buf)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Load a cache written by [`LtasProfile::save_cache`]. Returns
    /// Ok(None) when the stored key does not match (stale cache).
    pub fn load_cache(path: impl AsRef<Path>, expected_key: u64) -> Result<Option<Self>> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let ctx = || path.display().to_string();
        let fail = |d: &str| Error::format(ctx(), d.to_string());
        if bytes.len() < 28 || &bytes[0..4] != b"GELT" {
            return Err(fail("not an LTAS cache file"));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != 1 {
            return Err(fail(&format!("unsupported cache version {version}")));
        }
        let key = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if key != expected_key {
            return Ok(None);
        }
        let sample_rate = u32_at(16);
        let window_size = u32_at(20) as usize;
        let n = u32_at(24) as usize;
        if bytes.len() != 28 + 16 * n {
            return Err(fail("truncated cache file"));
        }
        let mut freqs = Vec::with_capacity(n);
        let mut power = Vec::with_capacity(n);
        for i in 0..n {
            let off = 28 + 16 * i;
            freqs.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            power.push(f64::from_le_bytes(
                bytes[off + 8..off + 16].try_into().unwrap(),
            ));
        }
        Ok(Some(LtasProfile::from_parts(
            freqs,
            power,
            sample_rate,
            window_size,
        )?))
    }
}

/// Gaussian smoothing over log2 frequency, FWHM one third octave.
/// Weights are normalized per bin, so constants are preserved exactly.
pub(crate) fn smooth_log2(freqs: &[f64], power: &[f64]) -> Vec<f64> {
    let sigma = smoothing_sigma_octaves();
    let half_width = 4.0 * sigma;
    let logs: Vec<f64> = freqs.iter().map(|f| f.log2()).collect();
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);

    let smooth_one = |k: usize| -> f64 {
        let center = logs[k];
        let lo = logs.partition_point(|&u| u < center - half_width);
        let hi = logs.partition_point(|&u| u <= center + half_width);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in lo..hi {
            let d = logs[j] - center;
            let w = (-d * d * inv_two_sigma_sq).exp();
            num += w * power[j];
            den += w;
        }
        num / den
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..freqs.len()).into_par_iter().map(smooth_one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..freqs.len()).map(smooth_one).collect()
    }
}

/// LTAS of one signal. The signal should be at least a few windows
/// long for a stable estimate; one window is the hard minimum.
pub fn compute_ltas(signal: &Signal, config: StftConfig) -> Result<LtasProfile> {
    let partial = LtasPartial::from_signal(signal, config)?;
    LtasProfile::from_accumulated(
        &partial.power_sum,
        partial.num_frames,
        partial.sample_rate,
        partial.window_size,
    )
}

/// Frame-weighted LTAS over several signals: the mean is taken per
/// STFT frame across all inputs. Partials may be computed
/// concurrently; they are merged in input order so the result is
/// deterministic.
pub fn corpus_ltas(signals: &[Signal], config: StftConfig) -> Result<LtasProfile> {
    if signals.is_empty() {
        return Err(Error::InputSize("corpus is empty".into()));
    }
    let partials: Vec<Result<LtasPartial>> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            signals
                .par_iter()
                .map(|s| LtasPartial::from_signal(s, config))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            signals
                .iter()
                .map(|s| LtasPartial::from_signal(s, config))
                .collect()
        }
    };
    merge_partials(partials.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Merge per-file partials (frame-weighted) into one profile.
pub fn merge_partials(partials: Vec<LtasPartial>) -> Result<LtasProfile> {
    let first = partials
        .first()
        .ok_or_else(|| Error::InputSize("no partials to merge".into()))?;
    let (sr, win) = (first.sample_rate, first.window_size);
    let mut acc = Vec::new();
    let mut frames = 0usize;
    for p in &partials {
        if p.sample_rate != sr || p.window_size != win {
            return Err(Error::Shape(
                "corpus files must share one sample rate and window".into(),
            ));
        }
        p.merge_into(&mut acc, &mut frames)?;
    }
    LtasProfile::from_accumulated(&acc, frames, sr, win)
}

/// Per-bin equalizer amplitude estimated from two profiles on the same
/// grid: |H| = sqrt(input power / reference power), floored at -20 dB.
pub fn ltas_eq_filter(input: &LtasProfile, reference: &LtasProfile) -> Result<Vec<f64>> {
    if !input.same_grid(reference) {
        return Err(Error::Shape(
            "input and reference profiles must share one grid".into(),
        ));
    }
    let floor_in = POWER_EPS_REL * input.power.iter().cloned().fold(0.0f64, f64::max);
    let floor_ref = POWER_EPS_REL * reference.power.iter().cloned().fold(0.0f64, f64::max);
    let gain_floor = fft::db_to_linear(EQ_FLOOR_DB);
    Ok(input
        .power
        .iter()
        .zip(&reference.power)
        .map(|(&pi, &pr)| {
            let num = pi.max(floor_in);
            let den = pr.max(floor_ref);
            let h = if den == 0.0 { 1.0 } else { (num / den).sqrt() };
            h.max(gain_floor)
        })
        .collect())
}

/// Invert an estimated equalizer: apply gain 1/h, zero phase, with h
/// resampled from the profile grid to the full-segment grid by linear
/// interpolation in (log2 f, dB).
pub fn apply_inverse_eq(signal: &Signal, h: &[f64], profile: &LtasProfile) -> Result<Signal> {
    if h.len() != profile.freqs_hz.len() {
        return Err(Error::Shape(format!(
            "equalizer has {} bins, profile grid has {}",
            h.len(),
            profile.freqs_hz.len()
        )));
    }
    if let Some(bad) = h.iter().find(|v| !v.is_finite() || **v <= 0.0) {
        return Err(Error::Domain(format!(
            "equalizer gains must be positive and finite, got {bad}"
        )));
    }
    let inv_db: Vec<f64> = h.iter().map(|&g| -fft::linear_to_db(g)).collect();
    let n_fft = fft::full_fft_len(signal.len());
    let dst_f = fft::onesided_freqs(n_fft, signal.sample_rate());
    let full_db = interp_log2_db(&profile.freqs_hz, &inv_db, &dst_f);
    let gains: Vec<f64> = full_db.iter().map(|&d| fft::db_to_linear(d)).collect();
    crate::signal::apply_zero_phase_gains(signal, &gains)
}

/// Mean relative spectral deviation in dB:
/// 10 log10( (1/K) sum |X - R| / R ), power-floored, clamped at -60 dB.
pub fn ltas_distance(x: &LtasProfile, r: &LtasProfile) -> Result<f64> {
    if !x.same_grid(r) {
        return Err(Error::Shape(
            "profiles must share one grid for a distance".into(),
        ));
    }
    let floor_x = POWER_EPS_REL * x.power.iter().cloned().fold(0.0f64, f64::max);
    let floor_r = POWER_EPS_REL * r.power.iter().cloned().fold(0.0f64, f64::max);
    let mut acc = 0.0;
    for (&px, &pr) in x.power.iter().zip(&r.power) {
        let xr = px.max(floor_x);
        let rr = pr.max(floor_r);
        if rr == 0.0 {
            continue;
        }
        acc += (xr - rr).abs() / rr;
    }
    let mean = acc / x.power.len() as f64;
    let db = 10.0 * mean.max(1e-300).log10();
    Ok(db.max(DISTANCE_FLOOR_DB))
}

/// Piecewise-linear interpolation in (log2 frequency, dB) with constant
/// extrapolation beyond the source grid. A destination frequency of
/// zero (the DC bin) takes the first source value.
pub fn interp_log2_db(src_f: &[f64], src_db: &[f64], dst_f: &[f64]) -> Vec<f64> {
    debug_assert_eq!(src_f.len(), src_db.len());
    debug_assert!(!src_f.is_empty());
    let src_u: Vec<f64> = src_f.iter().map(|f| f.log2()).collect();
    dst_f
        .iter()
        .map(|&f| {
            if f <= src_f[0] {
                return src_db[0];
            }
            if f >= src_f[src_f.len() - 1] {
                return src_db[src_db.len() - 1];
            }
            let u = f.log2();
            let idx = src_u.partition_point(|&v| v <= u);
            let (u0, u1) = (src_u[idx - 1], src_u[idx]);
            let t = (u - u0) / (u1 - u0);
            src_db[idx - 1] * (1.0 - t) + src_db[idx] * t
        })
        .collect()
}

/// Incremental FNV-1a 64-bit hash for corpus cache keys.
#[derive(Debug, Clone)]
pub struct CacheKeyHasher {
    state: u64,
}

impl Default for CacheKeyHasher {
    fn default() -> Self {
        CacheKeyHasher {
            state: 0xcbf29ce484222325,
        }
    }
}

impl CacheKeyHasher {
    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.state ^= b as u64;
            self.state = self.state.wrapping_mul(0x100000001b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}
