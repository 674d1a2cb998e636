//! Denoiser priors: the pluggable "one denoising step" interface the
//! sampler is built on, plus analytically tractable implementations.
//!
//! A prior exposes D(x, sigma), its best estimate of the clean signal
//! underlying x at noise level sigma, and a vector-Jacobian product for
//! the likelihood gradient chain. The Gaussian PSD prior has an exact
//! closed form for both, which makes every downstream sampling claim
//! checkable without trained networks.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::Signal;

/// Result of a vector-Jacobian product. `exact` is false when the
/// fallback finite-difference path produced the value.
#[derive(Debug, Clone)]
pub struct VjpOutput {
    pub value: Signal,
    pub exact: bool,
}

/// A denoiser prior over audio segments.
pub trait DenoiserPrior: Send + Sync {
    /// Estimate of the clean signal underlying x at noise level sigma.
    /// Must satisfy denoise(x, 0) = x.
    fn denoise(&self, x: &Signal, sigma: f64) -> Result<Signal>;

    /// v^T dD/dx at (x, sigma).
    ///
    /// The default implementation assumes a symmetric Jacobian (true
    /// for minimum mean-square-error denoisers, whose Jacobian is the
    /// Hessian of a log-density) and returns the central difference
    /// (D(x + eps v) - D(x - eps v)) / (2 eps) with
    /// eps = 1e-4 (1 + max|x|), flagged as inexact.
    fn vjp(&self, x: &Signal, sigma: f64, cotangent: &Signal) -> Result<VjpOutput> {
        if cotangent.len() != x.len() {
            return Err(Error::Shape(format!(
                "cotangent length {} does not match signal length {}",
                cotangent.len(),
                x.len()
            )));
        }
        let eps = 1e-4 * (1.0 + x.samples().iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let shift = |dir: f64| -> Result<Signal> {
            let shifted: Vec<f64> = x
                .samples()
                .iter()
                .zip(cotangent.samples())
                .map(|(&xi, &vi)| xi + dir * eps * vi)
                .collect();
            self.denoise(&Signal::new(shifted, x.sample_rate())?, sigma)
        };
        let hi = shift(1.0)?;
        let lo = shift(-1.0)?;
        let diff: Vec<f64> = hi
            .samples()
            .iter()
            .zip(lo.samples())
            .map(|(&h, &l)| (h - l) / (2.0 * eps))
            .collect();
        Ok(VjpOutput {
            value: Signal::new(diff, x.sample_rate())?,
            exact: false,
        })
    }
}

/// Score of the smoothed prior at noise level sigma:
/// s(x, sigma) = (D(x, sigma) - x) / sigma^2.
pub fn prior_score(prior: &dyn DenoiserPrior, x: &Signal, sigma: f64) -> Result<Signal> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!(
            "score requires sigma > 0, got {sigma}"
        )));
    }
    let d = prior.denoise(x, sigma)?;
    let inv = 1.0 / (sigma * sigma);
    let score: Vec<f64> = d
        .samples()
        .iter()
        .zip(x.samples())
        .map(|(&di, &xi)| (di - xi) * inv)
        .collect();
    Signal::new(score, x.sample_rate())
}

/// The trivial prior D(x, sigma) = x. Its score is identically zero;
/// useful as a reference point in gradient tests.
#[derive(Debug, Clone, Copy)]
pub struct IdentityPrior;

impl DenoiserPrior for IdentityPrior {
    fn denoise(&self, x: &Signal, _sigma: f64) -> Result<Signal> {
        Ok(x.clone())
    }

    fn vjp(&self, x: &Signal, _sigma: f64, cotangent: &Signal) -> Result<VjpOutput> {
        if cotangent.len() != x.len() {
            return Err(Error::Shape(format!(
                "cotangent length {} does not match signal length {}",
                cotangent.len(),
                x.len()
            )));
        }
        Ok(VjpOutput {
            value: cotangent.clone(),
            exact: true,
        })
    }
}

/// Stationary Gaussian prior given by a one-sided power spectral
/// density on the full-segment FFT grid.
///
/// PSD convention: power per bin normalized so that unit-variance white
/// noise has psd identically 1 (i.e. E|X_k|^2 / N for the unnormalized
/// forward transform). White observation noise of standard deviation
/// sigma then contributes sigma^2 per bin, and the exact minimum
/// mean-square-error denoiser is per-bin Wiener shrinkage
/// psd / (psd + sigma^2).
#[derive(Debug, Clone)]
pub struct GaussianPsdPrior {
    psd: Vec<f64>,
}

impl GaussianPsdPrior {
    /// psd covers the one-sided grid of a power-of-two FFT:
    /// len = n_fft / 2 + 1.
    pub fn new(psd: Vec<f64>) -> Result<Self> {
        if psd.len() < 2 || !(psd.len() - 1).is_power_of_two() {
            return Err(Error::Shape(format!(
                "psd must have 2^k + 1 bins for a power-of-two FFT, got {}",
                psd.len()
            )));
        }
        if let Some(bad) = psd.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Domain(format!(
                "psd values must be finite and non-negative, got {bad}"
            )));
        }
        Ok(GaussianPsdPrior { psd })
    }

    /// Uniform psd: a white Gaussian prior with per-sample variance `power`.
    pub fn white(power: f64, n_fft: usize) -> Result<Self> {
        GaussianPsdPrior::new(vec![power; fft::onesided_len(n_fft)])
    }

    pub fn psd(&self) -> &[f64] {
        &self.psd
    }

    pub fn n_fft(&self) -> usize {
        (self.psd.len() - 1) * 2
    }

    fn check_grid(&self, x: &Signal) -> Result<usize> {
        let n_fft = fft::full_fft_len(x.len());
        if fft::onesided_len(n_fft) != self.psd.len() {
            return Err(Error::Shape(format!(
                "signal of {} samples needs a psd with {} bins, prior has {}",
                x.len(),
                fft::onesided_len(n_fft),
                self.psd.len()
            )));
        }
        Ok(n_fft)
    }

    fn wiener_gains(&self, sigma: f64) -> Vec<f64> {
        let noise = sigma * sigma;
        self.psd
            .iter()
            .map(|&p| if p == 0.0 && noise == 0.0 { 0.0 } else { p / (p + noise) })
            .collect()
    }

    /// Draw a stationary sample whose expected periodogram is the psd.
    /// Exact for len equal to the prior's FFT length; shorter requests
    /// return the leading samples of such a draw.
    pub fn sample(&self, len: usize, sample_rate: u32, rng: &mut impl Rng) -> Result<Signal> {
        let n = self.n_fft();
        if len > n {
            return Err(Error::Shape(format!(
                "requested {len} samples from a prior on a {n}-point grid"
            )));
        }
        let mut spectrum = vec![Complex::new(0.0, 0.0); n];
        let nf = n as f64;
        spectrum[0] = Complex::new(
            rng.sample::<f64, _>(StandardNormal) * (self.psd[0] * nf).sqrt(),
            0.0,
        );
        spectrum[n / 2] = Complex::new(
            rng.sample::<f64, _>(StandardNormal) * (self.psd[n / 2] * nf).sqrt(),
            0.0,
        );
        for k in 1..n / 2 {
            let amp = (self.psd[k] * nf / 2.0).sqrt();
            let re = rng.sample::<f64, _>(StandardNormal) * amp;
            let im = rng.sample::<f64, _>(StandardNormal) * amp;
            spectrum[k] = Complex::new(re, im);
            spectrum[n - k] = Complex::new(re, -im);
        }
        let out = fft::real_ifft(&mut spectrum, len)?;
        Signal::new(out, sample_rate)
    }
}

impl DenoiserPrior for GaussianPsdPrior {
    fn denoise(&self, x: &Signal, sigma: f64) -> Result<Signal> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!(
                "sigma must be finite and non-negative, got {sigma}"
            )));
        }
        self.check_grid(x)?;
        if sigma == 0.0 {
            return Ok(x.clone());
        }
        let gains = self.wiener_gains(sigma);
        let out = fft::filter_with_gains(x.samples(), &gains)?;
        Signal::new(out, x.sample_rate())
    }

    /// The Wiener map is linear, diagonal in frequency, and real, so it
    /// is self-adjoint: the exact VJP is the map itself applied to the
    /// cotangent.
    fn vjp(&self, x: &Signal, sigma: f64, cotangent: &Signal) -> Result<VjpOutput> {
        if cotangent.len() != x.len() {
            return Err(Error::Shape(format!(
                "cotangent length {} does not match signal length {}",
                cotangent.len(),
                x.len()
            )));
        }
        Ok(VjpOutput {
            value: self.denoise(cotangent, sigma)?,
            exact: true,
        })
    }
}

/// Scaling coefficients for a preconditioned denoiser at noise level
/// sigma with data scale sigma_data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Preconditioning {
    pub fn at(sigma: f64, sigma_data: f64) -> Result<Self> {
        if !(sigma > 0.0) || !(sigma_data > 0.0) {
            return Err(Error::Domain(format!(
                "preconditioning needs sigma > 0 and sigma_data > 0, got {sigma}, {sigma_data}"
            )));
        }
        let total = sigma_data * sigma_data + sigma * sigma;
        Ok(Preconditioning {
            c_skip: sigma_data * sigma_data / total,
            c_out: sigma * sigma_data / total.sqrt(),
            c_in: 1.0 / total.sqrt(),
            c_noise: sigma.ln() / 4.0,
        })
    }
}

/// Wrap a raw network-style function F(scaled_input, noise_embedding)
/// into a denoiser:
/// D(x, sigma) = c_skip x + c_out F(c_in x, c_noise).
pub struct PreconditionedDenoiser<F> {
    raw: F,
    sigma_data: f64,
}

impl<F> PreconditionedDenoiser<F>
where
    F: Fn(&Signal, f64) -> Result<Signal> + Send + Sync,
{
    pub fn new(raw: F, sigma_data: f64) -> Result<Self> {
        if !(sigma_data > 0.0) || !sigma_data.is_finite() {
            return Err(Error::Domain(format!(
                "sigma_data must be positive and finite, got {sigma_data}"
            )));
        }
        Ok(PreconditionedDenoiser { raw, sigma_data })
    }
}

impl<F> DenoiserPrior for PreconditionedDenoiser<F>
where
    F: Fn(&Signal, f64) -> Result<Signal> + Send + Sync,
{
    fn denoise(&self, x: &Signal, sigma: f64) -> Result<Signal> {
        if sigma == 0.0 {
            return Ok(x.clone());
        }
        let c = Preconditioning::at(sigma, self.sigma_data)?;
        let scaled: Vec<f64> = x.samples().iter().map(|&v| c.c_in * v).collect();
        let raw_out = (self.raw)(&Signal::new(scaled, x.sample_rate())?, c.c_noise)?;
        if raw_out.len() != x.len() {
            return Err(Error::Shape(format!(
                "raw network returned {} samples for {} inputs",
                raw_out.len(),
                x.len()
            )));
        }
        let out: Vec<f64> = x
            .samples()
            .iter()
            .zip(raw_out.samples())
            .map(|(&xi, &fi)| c.c_skip * xi + c.c_out * fi)
            .collect();
        Signal::new(out, x.sample_rate())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_signal(rng: &mut ChaCha8Rng, len: usize) -> Signal {
        let samples: Vec<f64> = (0..len)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Signal::new(samples, 22050).unwrap()
    }

    #[test]
    fn sigma_zero_returns_input_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_signal(&mut rng, 1024);
        let prior = GaussianPsdPrior::white(2.0, 1024).unwrap();
        let out = prior.denoise(&x, 0.0).unwrap();
        assert_eq!(out.samples(), x.samples());
    }

    #[test]
    fn white_prior_applies_uniform_shrinkage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_signal(&mut rng, 512);
        let p = 3.0;
        let sigma = 0.7;
        let prior = GaussianPsdPrior::white(p, 512).unwrap();
        let out = prior.denoise(&x, sigma).unwrap();
        let factor = p / (p + sigma * sigma);
        for (o, i) in out.samples().iter().zip(x.samples()) {
            assert_relative_eq!(*o, factor * i, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn colored_prior_matches_per_bin_wiener_oracle() {
        let n = 256;
        let mut psd = vec![0.5; fft::onesided_len(n)];
        for (k, p) in psd.iter_mut().enumerate() {
            *p = 0.1 + 4.0 / (1.0 + (k as f64 / 10.0).powi(2));
        }
        let prior = GaussianPsdPrior::new(psd.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_signal(&mut rng, n);
        let sigma = 0.9;
        let out = prior.denoise(&x, sigma).unwrap();

        // Oracle: per-bin shrinkage applied through an independent FFT
        // of the input spectrum.
        let mut spec = fft::real_fft(x.samples(), n).unwrap();
        for (k, c) in spec.iter_mut().enumerate() {
            let bin = if k <= n / 2 { k } else { n - k };
            *c *= psd[bin] / (psd[bin] + sigma * sigma);
        }
        let expected = fft::real_ifft(&mut spec, n).unwrap();
        for (o, e) in out.samples().iter().zip(&expected) {
            assert_relative_eq!(*o, *e, epsilon = 1e-12);
        }
    }

    #[test]
    fn denoiser_approaches_identity_as_sigma_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_signal(&mut rng, 512);
        let prior = GaussianPsdPrior::white(1.0, 512).unwrap();
        let out = prior.denoise(&x, 1e-7).unwrap();
        for (o, i) in out.samples().iter().zip(x.samples()) {
            assert!((o - i).abs() < 1e-10);
        }
    }

    #[test]
    fn denoising_never_increases_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = GaussianPsdPrior::white(1.5, 1024).unwrap();
        for sigma in [0.1, 1.0, 10.0] {
            let x = random_signal(&mut rng, 1024);
            let out = prior.denoise(&x, sigma).unwrap();
            assert!(out.rms() <= x.rms() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gaussian_vjp_is_exact_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prior = GaussianPsdPrior::white(2.0, 256).unwrap();
        let x = random_signal(&mut rng, 256);
        let v = random_signal(&mut rng, 256);
        let w = random_signal(&mut rng, 256);
        let sigma = 0.5;
        let out = prior.vjp(&x, sigma, &v).unwrap();
        assert!(out.exact);
        // <vjp(v), w> == <v, J w>, with J w computed through denoise
        // since the map is linear.
        let jw = prior.denoise(&w, sigma).unwrap();
        let lhs: f64 = out.value.samples().iter().zip(w.samples()).map(|(a, b)| a * b).sum();
        let rhs: f64 = v.samples().iter().zip(jw.samples()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn identity_prior_vjp_returns_cotangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_signal(&mut rng, 128);
        let v = random_signal(&mut rng, 128);
        let out = IdentityPrior.vjp(&x, 1.0, &v).unwrap();
        assert!(out.exact);
        assert_eq!(out.value.samples(), v.samples());
    }

    /// Elementwise nonlinear denoiser with a symmetric (diagonal)
    /// Jacobian, relying on the finite-difference vjp fallback.
    struct TanhDenoiser;

    impl DenoiserPrior for TanhDenoiser {
        fn denoise(&self, x: &Signal, sigma: f64) -> Result<Signal> {
            let out: Vec<f64> = x
                .samples()
                .iter()
                .map(|&v| v - sigma * sigma * v.tanh())
                .collect();
            Signal::new(out, x.sample_rate())
        }
    }

    #[test]
    fn fallback_vjp_matches_analytic_diagonal_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_signal(&mut rng, 64);
        let v = random_signal(&mut rng, 64);
        let sigma = 0.4;
        let out = TanhDenoiser.vjp(&x, sigma, &v).unwrap();
        assert!(!out.exact, "fallback path must flag inexact results");
        for i in 0..64 {
            let xi = x.samples()[i];
            let jac_ii = 1.0 - sigma * sigma * (1.0 - xi.tanh().powi(2));
            assert_relative_eq!(
                out.value.samples()[i],
                jac_ii * v.samples()[i],
                epsilon = 1e-6,
                max_relative = 1e-5
            );
        }
    }

    #[test]
    fn prior_score_matches_gaussian_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 2.5;
        let sigma = 0.8;
        let prior = GaussianPsdPrior::white(p, 512).unwrap();
        let x = random_signal(&mut rng, 512);
        let score = prior_score(&prior, &x, sigma).unwrap();
        // Smoothed prior is N(0, p + sigma^2) per sample: score = -x / (p + sigma^2).
        for (s, xi) in score.samples().iter().zip(x.samples()) {
            assert_relative_eq!(*s, -xi / (p + sigma * sigma), max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn prior_score_rejects_zero_sigma() {
        let prior = GaussianPsdPrior::white(1.0, 64).unwrap();
        let x = Signal::new(vec![0.1; 64], 22050).unwrap();
        assert!(prior_score(&prior, &x, 0.0).is_err());
    }

    #[test]
    fn identity_prior_score_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_signal(&mut rng, 128);
        let score = prior_score(&IdentityPrior, &x, 0.5).unwrap();
        assert!(score.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn preconditioning_coefficients_at_sigma_data() {
        let sigma_data = 0.063;
        let c = Preconditioning::at(sigma_data, sigma_data).unwrap();
        assert_relative_eq!(c.c_skip, 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.c_out, sigma_data / 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(c.c_in, 1.0 / (sigma_data * 2f64.sqrt()), epsilon = 1e-12);
        assert_relative_eq!(c.c_noise, sigma_data.ln() / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn preconditioned_identity_network_blends_skip_and_out() {
        let sigma_data = 0.5;
        let wrapped = PreconditionedDenoiser::new(
            |z: &Signal, _c: f64| Ok(z.clone()),
            sigma_data,
        )
        .unwrap();
        let x = Signal::new(vec![1.0; 32], 22050).unwrap();
        let sigma = 0.25;
        let out = wrapped.denoise(&x, sigma).unwrap();
        let c = Preconditioning::at(sigma, sigma_data).unwrap();
        let expected = c.c_skip + c.c_out * c.c_in;
        for &o in out.samples() {
            assert_relative_eq!(o, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn preconditioned_skip_dominates_at_small_sigma() {
        let wrapped = PreconditionedDenoiser::new(
            |z: &Signal, _c: f64| Ok(z.clone()),
            1.0,
        )
        .unwrap();
        let x = Signal::new(vec![0.7; 16], 22050).unwrap();
        let out = wrapped.denoise(&x, 1e-6).unwrap();
        for (o, i) in out.samples().iter().zip(x.samples()) {
            assert_relative_eq!(*o, *i, max_relative = 1e-5);
        }
    }

    #[test]
    fn psd_grid_mismatch_is_rejected() {
        let prior = GaussianPsdPrior::white(1.0, 512).unwrap();
        let x = Signal::new(vec![0.0; 600], 22050).unwrap();
        assert!(prior.denoise(&x, 0.5).is_err());
    }

    #[test]
    fn sampled_noise_matches_psd_statistics() {
        let n = 4096;
        let mut psd = vec![0.0; fft::onesided_len(n)];
        for (k, p) in psd.iter_mut().enumerate() {
            *p = 2.0 / (1.0 + (k as f64 / 200.0).powi(2));
        }
        let prior = GaussianPsdPrior::new(psd.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 200;
        let mut mean_power = vec![0.0; fft::onesided_len(n)];
        for _ in 0..trials {
            let s = prior.sample(n, 22050, &mut rng).unwrap();
            let spec = fft::real_fft(s.samples(), n).unwrap();
            for k in 0..mean_power.len() {
                mean_power[k] += spec[k].norm_sqr() / n as f64;
            }
        }
        for p in &mut mean_power {
            *p /= trials as f64;
        }
        // Compare band averages to smooth out per-bin estimator noise.
        for band in 0..8 {
            let lo = band * 256;
            let hi = lo + 256;
            let est: f64 = mean_power[lo..hi].iter().sum::<f64>() / 256.0;
            let truth: f64 = psd[lo..hi].iter().sum::<f64>() / 256.0;
            assert_relative_eq!(est, truth, max_relative = 0.1);
        }
    }
}
