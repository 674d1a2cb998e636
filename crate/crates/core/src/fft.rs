//! FFT plumbing shared by the signal, denoiser, and sampler modules.
//!
//! Conventions: unnormalized forward transform, inverse scaled by 1/N.
//! Real signals are processed through complex transforms; one-sided
//! spectra hold bins 0..=N/2 and expand Hermitian-symmetrically.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

static PLANNER: OnceLock<Mutex<PlannerCache>> = OnceLock::new();

struct PlannerCache {
    planner: FftPlanner<f64>,
    forward: HashMap<usize, Arc<dyn Fft<f64>>>,
    inverse: HashMap<usize, Arc<dyn Fft<f64>>>,
}

fn with_cache<T>(f: impl FnOnce(&mut PlannerCache) -> T) -> T {
    let cache = PLANNER.get_or_init(|| {
        Mutex::new(PlannerCache {
            planner: FftPlanner::new(),
            forward: HashMap::new(),
            inverse: HashMap::new(),
        })
    });
    let mut guard = cache.lock().expect("fft planner cache poisoned");
    f(&mut guard)
}

pub fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    with_cache(|c| {
        c.forward
            .entry(len)
            .or_insert_with(|| c.planner.plan_fft_forward(len))
            .clone()
    })
}

pub fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    with_cache(|c| {
        c.inverse
            .entry(len)
            .or_insert_with(|| c.planner.plan_fft_inverse(len))
            .clone()
    })
}

/// Smallest power of two >= n (and >= 1).
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// FFT length used when a whole segment is transformed at once.
pub fn full_fft_len(signal_len: usize) -> usize {
    next_pow2(signal_len)
}

/// Number of one-sided bins for an FFT of length n.
pub fn onesided_len(n_fft: usize) -> usize {
    n_fft / 2 + 1
}

/// Bin center frequencies in Hz for the one-sided grid of an FFT.
pub fn onesided_freqs(n_fft: usize, sample_rate: u32) -> Vec<f64> {
    let df = sample_rate as f64 / n_fft as f64;
    (0..onesided_len(n_fft)).map(|k| k as f64 * df).collect()
}

/// Forward transform of a real signal zero-padded to n_fft.
pub fn real_fft(samples: &[f64], n_fft: usize) -> Result<Vec<Complex<f64>>> {
    if samples.len() > n_fft {
        return Err(Error::Shape(format!(
            "signal length {} exceeds FFT length {}",
            samples.len(),
            n_fft
        )));
    }
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(n_fft, Complex::new(0.0, 0.0));
    forward_plan(n_fft).process(&mut buf);
    Ok(buf)
}

/// Inverse transform back to a real signal of length out_len.
pub fn real_ifft(spectrum: &mut [Complex<f64>], out_len: usize) -> Result<Vec<f64>> {
    let n = spectrum.len();
    if out_len > n {
        return Err(Error::Shape(format!(
            "output length {} exceeds FFT length {}",
            out_len, n
        )));
    }
    inverse_plan(n).process(spectrum);
    let scale = 1.0 / n as f64;
    Ok(spectrum[..out_len].iter().map(|c| c.re * scale).collect())
}

/// Multiply a full complex spectrum by real per-bin gains given one-sided.
///
/// Gains are mirrored Hermitian-symmetrically, so the filtered signal
/// stays real and the filter has exactly zero phase.
pub fn apply_onesided_gains(spectrum: &mut [Complex<f64>], gains: &[f64]) -> Result<()> {
    let n = spectrum.len();
    if gains.len() != onesided_len(n) {
        return Err(Error::Shape(format!(
            "gain grid has {} bins, FFT of length {} needs {}",
            gains.len(),
            n,
            onesided_len(n)
        )));
    }
    if let Some(bad) = gains.iter().find(|g| !g.is_finite()) {
        return Err(Error::numeric(
            "apply_onesided_gains",
            format!("non-finite gain {bad}"),
        ));
    }
    for (k, c) in spectrum.iter_mut().enumerate() {
        let g = gains[if k <= n / 2 { k } else { n - k }];
        *c *= g;
    }
    Ok(())
}

/// Zero-phase filter: pad to the full FFT grid, scale bins, transform back.
pub fn filter_with_gains(samples: &[f64], gains: &[f64]) -> Result<Vec<f64>> {
    let n_fft = full_fft_len(samples.len());
    let mut spectrum = real_fft(samples, n_fft)?;
    apply_onesided_gains(&mut spectrum, gains)?;
    real_ifft(&mut spectrum, samples.len())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn linear_to_db(amplitude: f64) -> f64 {
    20.0 * amplitude.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn direct_dft(samples: &[f64], n: usize) -> Vec<Complex<f64>> {
        (0..n)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (i, &x) in samples.iter().enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                    acc += Complex::new(x, 0.0) * Complex::new(phase.cos(), phase.sin());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn forward_matches_direct_dft() {
        let samples: Vec<f64> = (0..64).map(|i| ((i * 7 + 3) % 13) as f64 - 6.0).collect();
        let fast = real_fft(&samples, 64).unwrap();
        let slow = direct_dft(&samples, 64);
        for (a, b) in fast.iter().zip(&slow) {
            assert_relative_eq!(a.re, b.re, epsilon = 1e-9, max_relative = 1e-9);
            assert_relative_eq!(a.im, b.im, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn round_trip_recovers_signal() {
        let samples: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let n = full_fft_len(samples.len());
        let mut spec = real_fft(&samples, n).unwrap();
        let back = real_ifft(&mut spec, samples.len()).unwrap();
        for (a, b) in samples.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn unity_gains_preserve_signal() {
        let samples: Vec<f64> = (0..333).map(|i| (i as f64 * 0.11).cos()).collect();
        let gains = vec![1.0; onesided_len(full_fft_len(333))];
        let out = filter_with_gains(&samples, &gains).unwrap();
        for (a, b) in samples.iter().zip(&out) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_gain_scales_rms_exactly() {
        let samples: Vec<f64> = (0..512).map(|i| (i as f64 * 0.41).sin() * 0.3).collect();
        let g = db_to_linear(-80.0);
        let gains = vec![g; onesided_len(512)];
        let out = filter_with_gains(&samples, &gains).unwrap();
        let rms_in: f64 = samples.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rms_out: f64 = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_relative_eq!(rms_out, 1e-4 * rms_in, max_relative = 1e-6);
    }

    #[test]
    fn single_bin_gain_scales_that_bin_only() {
        let n = 256;
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                (2.0 * std::f64::consts::PI * 8.0 * t).sin()
                    + 0.5 * (2.0 * std::f64::consts::PI * 32.0 * t).cos()
            })
            .collect();
        let mut gains = vec![1.0; onesided_len(n)];
        gains[8] = 0.0;
        let out = filter_with_gains(&samples, &gains).unwrap();
        let expected: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                0.5 * (2.0 * std::f64::consts::PI * 32.0 * t).cos()
            })
            .collect();
        for (a, b) in out.iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn non_finite_gain_is_rejected() {
        let samples = vec![0.0; 16];
        let mut gains = vec![1.0; onesided_len(16)];
        gains[3] = f64::NAN;
        assert!(filter_with_gains(&samples, &gains).is_err());
    }
}
