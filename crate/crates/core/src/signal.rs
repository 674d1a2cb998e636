//! Time-domain signal container and short-time Fourier analysis.

use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft;

pub const SUPPORTED_SAMPLE_RATES: [u32; 2] = [22050, 44100];

/// Mono audio signal with finite samples and a positive sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(pos) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::numeric(
                "Signal::new",
                format!("non-finite sample at index {pos}"),
            ));
        }
        Ok(Signal {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }
}

/// Periodic Hann window: w[n] = 0.5 (1 - cos(2 pi n / N)).
///
/// The periodic form (denominator N, not N-1) satisfies constant
/// overlap-add at hop N/4.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()))
        .collect()
}

/// STFT analysis parameters. Hop is a fixed quarter of the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    window_size: usize,
}

impl StftConfig {
    pub fn new(window_size: usize) -> Result<Self> {
        if !window_size.is_power_of_two() || window_size < 8 {
            return Err(Error::Config(format!(
                "window size must be a power of two >= 8, got {window_size}"
            )));
        }
        Ok(StftConfig { window_size })
    }

    /// Window matched to the sample rate: 4096 at 44.1 kHz, 2048 at
    /// 22.05 kHz, so the bin width is ~10.77 Hz at both rates.
    pub fn for_sample_rate(sample_rate: u32) -> Result<Self> {
        match sample_rate {
            44100 => StftConfig::new(4096),
            22050 => StftConfig::new(2048),
            other => Err(Error::Config(format!(
                "unsupported sample rate {other} (expected 22050 or 44100)"
            ))),
        }
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop(&self) -> usize {
        self.window_size / 4
    }

    pub fn n_bins(&self) -> usize {
        fft::onesided_len(self.window_size)
    }

    pub fn num_frames(&self, signal_len: usize) -> usize {
        if signal_len < self.window_size {
            0
        } else {
            (signal_len - self.window_size) / self.hop() + 1
        }
    }

    pub fn bin_freq(&self, bin: usize, sample_rate: u32) -> f64 {
        bin as f64 * sample_rate as f64 / self.window_size as f64
    }
}

/// One-sided complex STFT frames (frames x bins).
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex<f64>>>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bins(&self) -> usize {
        self.config.n_bins()
    }

    /// Per-bin mean of |X|^2 over frames.
    pub fn mean_power(&self) -> Vec<f64> {
        let n_bins = self.n_bins();
        let mut acc = vec![0.0; n_bins];
        for frame in &self.frames {
            for (a, c) in acc.iter_mut().zip(frame) {
                *a += c.norm_sqr();
            }
        }
        let scale = 1.0 / self.frames.len().max(1) as f64;
        for a in &mut acc {
            *a *= scale;
        }
        acc
    }

    /// Per-bin magnitudes, one row per frame.
    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.frames
            .iter()
            .map(|f| f.iter().map(|c| c.norm()).collect())
            .collect()
    }
}

fn frame_fft(samples: &[f64], window: &[f64], start: usize, n: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(samples[start + i] * window[i], 0.0))
        .collect();
    fft::forward_plan(n).process(&mut buf);
    buf.truncate(fft::onesided_len(n));
    buf
}

/// Windowed one-sided STFT. The signal must cover at least one window.
pub fn stft(signal: &Signal, config: StftConfig) -> Result<Spectrogram> {
    let n = config.window_size();
    if signal.len() < n {
        return Err(Error::InputSize(format!(
            "signal of {} samples is shorter than one window ({n})",
            signal.len()
        )));
    }
    let window = hann_periodic(n);
    let hop = config.hop();
    let num_frames = config.num_frames(signal.len());
    let samples = signal.samples();

    #[cfg(feature = "parallel")]
    let frames: Vec<Vec<Complex<f64>>> = {
        use rayon::prelude::*;
        (0..num_frames)
            .into_par_iter()
            .map(|t| frame_fft(samples, &window, t * hop, n))
            .collect()
    };

    #[cfg(not(feature = "parallel"))]
    let frames: Vec<Vec<Complex<f64>>> = (0..num_frames)
        .map(|t| frame_fft(samples, &window, t * hop, n))
        .collect();

    Ok(Spectrogram {
        frames,
        config,
        sample_rate: signal.sample_rate(),
    })
}

/// Least-squares overlap-add inverse STFT.
///
/// Each inverse frame is weighted by the analysis window and the result
/// normalized by the accumulated squared window, which reproduces
/// unmodified interior samples exactly. Samples with window energy below
/// 1e-12 (the first/last edge) are left at zero.
pub fn istft(spec: &Spectrogram) -> Result<Signal> {
    let n = spec.config.window_size();
    let n_bins = spec.config.n_bins();
    let hop = spec.config.hop();
    let num_frames = spec.frames.len();
    if num_frames == 0 {
        return Err(Error::InputSize("spectrogram has no frames".into()));
    }
    for (t, frame) in spec.frames.iter().enumerate() {
        if frame.len() != n_bins {
            return Err(Error::Shape(format!(
                "frame {t} has {} bins, expected {n_bins}",
                frame.len()
            )));
        }
    }
    let window = hann_periodic(n);
    let out_len = (num_frames - 1) * hop + n;
    let mut num = vec![0.0; out_len];
    let mut den = vec![0.0; out_len];

    let time_frames: Vec<Vec<f64>> = {
        let expand = |frame: &Vec<Complex<f64>>| -> Vec<f64> {
            let mut full: Vec<Complex<f64>> = Vec::with_capacity(n);
            full.extend_from_slice(frame);
            for k in n_bins..n {
                full.push(frame[n - k].conj());
            }
            fft::inverse_plan(n).process(&mut full);
            let scale = 1.0 / n as f64;
            full.iter().map(|c| c.re * scale).collect()
        };

        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            spec.frames.par_iter().map(expand).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            spec.frames.iter().map(expand).collect()
        }
    };

    for (t, frame) in time_frames.iter().enumerate() {
        let offset = t * hop;
        for i in 0..n {
            num[offset + i] += frame[i] * window[i];
            den[offset + i] += window[i] * window[i];
        }
    }
    let out: Vec<f64> = num
        .iter()
        .zip(&den)
        .map(|(&v, &d)| if d > 1e-12 { v / d } else { 0.0 })
        .collect();
    Signal::new(out, spec.sample_rate)
}

/// Frequencies of the full-segment FFT grid used for zero-phase filtering.
pub fn full_grid_freqs(signal_len: usize, sample_rate: u32) -> Vec<f64> {
    fft::onesided_freqs(fft::full_fft_len(signal_len), sample_rate)
}

/// Apply a magnitude-only response given in dB on the full-segment grid.
///
/// The response must cover the one-sided grid of the segment FFT
/// (next power of two above the signal length). Phase is exactly zero.
pub fn apply_zero_phase_filter(signal: &Signal, response_db: &[f64]) -> Result<Signal> {
    if let Some(bad) = response_db.iter().find(|v| !v.is_finite()) {
        return Err(Error::numeric(
            "apply_zero_phase_filter",
            format!("non-finite response value {bad}"),
        ));
    }
    let gains: Vec<f64> = response_db.iter().map(|&db| fft::db_to_linear(db)).collect();
    apply_zero_phase_gains(signal, &gains)
}

/// Linear-gain variant of [`apply_zero_phase_filter`].
pub fn apply_zero_phase_gains(signal: &Signal, gains: &[f64]) -> Result<Signal> {
    let out = fft::filter_with_gains(signal.samples(), gains)?;
    Signal::new(out, signal.sample_rate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rustfft::num_complex::Complex;

    fn test_signal(len: usize, sample_rate: u32) -> Signal {
        let samples: Vec<f64> = (0..len)
            .map(|i| {
                let t = i as f64 / sample_rate as f64;
                (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                    + 0.3 * (2.0 * std::f64::consts::PI * 1234.5 * t).cos()
            })
            .collect();
        Signal::new(samples, sample_rate).unwrap()
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Signal::new(vec![0.0, f64::INFINITY], 44100).is_err());
        assert!(Signal::new(vec![0.0, f64::NAN], 44100).is_err());
    }

    #[test]
    fn stft_of_zero_signal_is_zero() {
        let sig = Signal::new(vec![0.0; 8192], 44100).unwrap();
        let spec = stft(&sig, StftConfig::new(4096).unwrap()).unwrap();
        assert!(spec.num_frames() > 0);
        for frame in &spec.frames {
            for c in frame {
                assert_eq!(c.norm(), 0.0);
            }
        }
    }

    #[test]
    fn stft_frame_count_and_bins() {
        let sig = test_signal(44100, 44100);
        let cfg = StftConfig::new(4096).unwrap();
        let spec = stft(&sig, cfg).unwrap();
        assert_eq!(spec.num_frames(), (44100 - 4096) / 1024 + 1);
        assert_eq!(spec.n_bins(), 2049);
    }

    #[test]
    fn stft_rejects_short_signal() {
        let sig = Signal::new(vec![0.0; 1000], 44100).unwrap();
        assert!(stft(&sig, StftConfig::new(4096).unwrap()).is_err());
    }

    #[test]
    fn sinusoid_at_bin_center_concentrates_energy() {
        let n = 2048;
        let cfg = StftConfig::new(n).unwrap();
        let sr = 22050;
        let bin = 100;
        let freq = bin as f64 * sr as f64 / n as f64;
        let samples: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect();
        let sig = Signal::new(samples.clone(), sr).unwrap();
        let spec = stft(&sig, cfg).unwrap();
        let frame = &spec.frames[0];

        // Oracle: direct windowed DFT at the peak bin.
        let window = hann_periodic(n);
        let mut direct = Complex::new(0.0, 0.0);
        for i in 0..n {
            let phase = -2.0 * std::f64::consts::PI * bin as f64 * i as f64 / n as f64;
            direct += Complex::new(samples[i] * window[i], 0.0)
                * Complex::new(phase.cos(), phase.sin());
        }
        assert_relative_eq!(frame[bin].re, direct.re, epsilon = 1e-9);
        assert_relative_eq!(frame[bin].im, direct.im, epsilon = 1e-9);

        // Periodic Hann spreads a bin-centered tone over exactly three
        // bins (coefficients 1/2, 1/4, 1/4); everything else is leakage.
        let peak_idx = (0..frame.len())
            .max_by(|&a, &b| frame[a].norm_sqr().total_cmp(&frame[b].norm_sqr()))
            .unwrap();
        assert_eq!(peak_idx, bin);
        let mainlobe: f64 = (bin - 1..=bin + 1).map(|k| frame[k].norm_sqr()).sum();
        let total: f64 = frame.iter().map(|c| c.norm_sqr()).sum();
        assert!(mainlobe / total > 0.99, "energy must concentrate around the tone bin");
    }

    #[test]
    fn frame_energy_matches_windowed_time_energy() {
        // Parseval per frame: sum_k weight |X_k|^2 / N == sum_n (w x)^2.
        let sig = test_signal(3 * 2048, 22050);
        let cfg = StftConfig::new(2048).unwrap();
        let spec = stft(&sig, cfg).unwrap();
        let window = hann_periodic(2048);
        let hop = cfg.hop();
        for (t, frame) in spec.frames.iter().enumerate() {
            let mut freq_energy = 0.0;
            for (k, c) in frame.iter().enumerate() {
                let weight = if k == 0 || k == 2048 / 2 { 1.0 } else { 2.0 };
                freq_energy += weight * c.norm_sqr();
            }
            freq_energy /= 2048.0;
            let time_energy: f64 = (0..2048)
                .map(|i| {
                    let v = sig.samples()[t * hop + i] * window[i];
                    v * v
                })
                .sum();
            assert_relative_eq!(freq_energy, time_energy, max_relative = 1e-6);
        }
    }

    #[test]
    fn istft_round_trip_is_exact_in_interior() {
        let sig = test_signal(6 * 2048, 22050);
        let cfg = StftConfig::new(2048).unwrap();
        let spec = stft(&sig, cfg).unwrap();
        let back = istft(&spec).unwrap();
        let n = cfg.window_size();
        let max_in = sig
            .samples()
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        for i in n..back.len() - n {
            assert!(
                (back.samples()[i] - sig.samples()[i]).abs() / max_in < 1e-6,
                "interior sample {i} diverged"
            );
        }
    }

    #[test]
    fn istft_of_zero_spectrogram_is_zero() {
        let cfg = StftConfig::new(2048).unwrap();
        let spec = Spectrogram {
            frames: vec![vec![Complex::new(0.0, 0.0); cfg.n_bins()]; 5],
            config: cfg,
            sample_rate: 22050,
        };
        let out = istft(&spec).unwrap();
        assert!(out.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn istft_places_single_frame_grain_correctly() {
        let cfg = StftConfig::new(256).unwrap();
        let n = 256;
        let n_bins = cfg.n_bins();
        let num_frames = 5;
        let target = 2usize;

        // A frame spectrum from known time content so magnitudes are consistent.
        let grain: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.21).sin()).collect();
        let window = hann_periodic(n);
        let mut buf: Vec<Complex<f64>> = grain
            .iter()
            .zip(&window)
            .map(|(&x, &w)| Complex::new(x * w, 0.0))
            .collect();
        crate::fft::forward_plan(n).process(&mut buf);
        let frame: Vec<Complex<f64>> = buf[..n_bins].to_vec();

        let mut frames = vec![vec![Complex::new(0.0, 0.0); n_bins]; num_frames];
        frames[target] = frame;
        let spec = Spectrogram {
            frames,
            config: cfg,
            sample_rate: 22050,
        };
        let out = istft(&spec).unwrap();

        // Oracle: replicate the overlap-add normalization directly.
        let hop = cfg.hop();
        let out_len = (num_frames - 1) * hop + n;
        let mut den = vec![0.0; out_len];
        for t in 0..num_frames {
            for i in 0..n {
                den[t * hop + i] += window[i] * window[i];
            }
        }
        let offset = target * hop;
        for i in 0..out_len {
            let expected = if i >= offset && i < offset + n && den[i] > 1e-12 {
                let j = i - offset;
                grain[j] * window[j] * window[j] / den[i]
            } else {
                0.0
            };
            assert_relative_eq!(out.samples()[i], expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_phase_identity_response_preserves_signal() {
        let sig = test_signal(5000, 44100);
        let grid = full_grid_freqs(sig.len(), sig.sample_rate());
        let response = vec![0.0; grid.len()];
        let out = apply_zero_phase_filter(&sig, &response).unwrap();
        for (a, b) in sig.samples().iter().zip(out.samples()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_phase_uniform_attenuation_scales_rms() {
        let sig = test_signal(5000, 44100);
        let response = vec![-80.0; full_grid_freqs(sig.len(), 44100).len()];
        let out = apply_zero_phase_filter(&sig, &response).unwrap();
        assert_relative_eq!(out.rms(), 1e-4 * sig.rms(), max_relative = 1e-6);
    }

    #[test]
    fn zero_phase_filter_output_lag_is_zero() {
        // Cross-correlation of input and filtered output peaks at lag 0.
        let sr = 22050;
        let sig = test_signal(4096, sr);
        let n_bins = full_grid_freqs(sig.len(), sr).len();
        let response: Vec<f64> = (0..n_bins)
            .map(|k| if k > n_bins / 4 { -20.0 } else { 0.0 })
            .collect();
        let out = apply_zero_phase_filter(&sig, &response).unwrap();
        let mut best_lag = 0isize;
        let mut best = f64::MIN;
        for lag in -8isize..=8 {
            let mut acc = 0.0;
            for i in 0..sig.len() {
                let j = i as isize + lag;
                if j >= 0 && (j as usize) < out.len() {
                    acc += sig.samples()[i] * out.samples()[j as usize];
                }
            }
            if acc > best {
                best = acc;
                best_lag = lag;
            }
        }
        assert_eq!(best_lag, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn stft_istft_round_trip_random_signals(
            seed in 0u64..1000,
            len_windows in 3usize..6,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 512;
            let len = len_windows * n;
            let samples: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sig = Signal::new(samples, 22050).unwrap();
            let spec = stft(&sig, StftConfig::new(n).unwrap()).unwrap();
            let back = istft(&spec).unwrap();
            for i in n..back.len() - n {
                prop_assert!((back.samples()[i] - sig.samples()[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn zero_phase_filter_is_linear(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let len = 1000;
            let a: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let n_bins = full_grid_freqs(len, 22050).len();
            let response: Vec<f64> = (0..n_bins).map(|k| -(k as f64) * 20.0 / n_bins as f64).collect();
            let fa = apply_zero_phase_filter(&Signal::new(a, 22050).unwrap(), &response).unwrap();
            let fb = apply_zero_phase_filter(&Signal::new(b, 22050).unwrap(), &response).unwrap();
            let fsum = apply_zero_phase_filter(&Signal::new(sum, 22050).unwrap(), &response).unwrap();
            for i in 0..len {
                prop_assert!((fsum.samples()[i] - fa.samples()[i] - fb.samples()[i]).abs() < 1e-9);
            }
        }
    }
}
