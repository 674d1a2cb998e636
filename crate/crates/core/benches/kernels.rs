//! Hot-kernel benchmarks. With the default `parallel` feature the
//! frame-parallel kernels run twice: once on the default rayon pool and
//! once on a single-thread pool, so one run shows the speedup on this
//! machine. Build with `--no-default-features` to measure the plain
//! sequential code instead (no rayon dispatch at all).

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use geneq_core::denoiser::{DenoiserPrior, GaussianPsdPrior};
use geneq_core::fft;
use geneq_core::filter::{default_f_max, BcrConfig, FilterParams};
use geneq_core::ltas::corpus_ltas;
use geneq_core::sampler::{
    audio_cost_gradient, filter_cost_and_gradient, magnitude_weights, AudioCostTerms,
    MagnitudeStats, SpectralWeighting,
};
use geneq_core::signal::{istft, stft, StftConfig};
use geneq_core::Signal;

const SR: u32 = 22050;

fn noise(len: usize, seed: u64) -> Signal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    Signal::new(
        (0..len)
            .map(|_| 0.3 * <rand_distr::StandardNormal as Distribution<f64>>::sample(&normal, &mut rng))
            .collect(),
        SR,
    )
    .unwrap()
}

/// Benchmark `body` once per pool variant: the default rayon pool and a
/// single-thread pool. Without the `parallel` feature there is nothing
/// to pin, so it runs once labeled `sequential`.
fn bench_pools<F: Fn() + Sync>(c: &mut Criterion, group: &str, body: F) {
    #[cfg(feature = "parallel")]
    {
        c.bench_function(&format!("{group}/default-pool"), |b| b.iter(&body));
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("single-thread pool");
        c.bench_function(&format!("{group}/one-thread"), |b| {
            b.iter(|| single.install(|| body()))
        });
    }
    #[cfg(not(feature = "parallel"))]
    c.bench_function(&format!("{group}/sequential"), |b| b.iter(&body));
}

fn bench_stft(c: &mut Criterion) {
    let sig = noise(5 * SR as usize, 1);
    let cfg = StftConfig::for_sample_rate(SR).unwrap();
    let spec = stft(&sig, cfg).unwrap();

    bench_pools(c, "stft-5s", || {
        std::hint::black_box(stft(&sig, cfg).unwrap());
    });
    bench_pools(c, "istft-5s", || {
        std::hint::black_box(istft(&spec).unwrap());
    });
    bench_pools(c, "magnitude-weights-5s", || {
        std::hint::black_box(magnitude_weights(&sig, cfg, SpectralWeighting::InverseMagnitude).unwrap());
    });
}

fn bench_corpus(c: &mut Criterion) {
    let corpus: Vec<Signal> = (0..8).map(|k| noise(2 * SR as usize, 100 + k)).collect();
    let cfg = StftConfig::for_sample_rate(SR).unwrap();
    bench_pools(c, "corpus-ltas-8x2s", || {
        std::hint::black_box(corpus_ltas(&corpus, cfg).unwrap());
    });
}

fn bench_scalar_kernels(c: &mut Criterion) {
    let f_max = default_f_max(SR).unwrap();
    let params = FilterParams::new(
        vec![100.0, 500.0, 1500.0, 3000.0, 6000.0],
        vec![3.0, -6.0, 2.0, -10.0],
        2,
        20.0,
        f_max,
    )
    .unwrap();
    c.bench_function("response-gains-64k", |b| {
        b.iter(|| std::hint::black_box(params.response_gains_for_fft(65536, SR).unwrap()))
    });

    let sig = noise(32768, 2);
    let cfg = StftConfig::for_sample_rate(SR).unwrap();
    let stats = MagnitudeStats::compute(&sig, &sig, cfg, None).unwrap();
    let weights = vec![1.0; stats.freqs().len()];
    let bcr = BcrConfig::default();
    c.bench_function("filter-cost-gradient-1024-bins", |b| {
        b.iter(|| std::hint::black_box(filter_cost_and_gradient(&params, &stats, &weights, &bcr).unwrap()))
    });

    let n = 32768;
    let n_one = fft::onesided_len(fft::full_fft_len(n));
    let psd: Vec<f64> = (0..n_one).map(|k| 1.0 / (1.0 + (k as f64 / 200.0).powi(2))).collect();
    let prior = GaussianPsdPrior::new(psd).unwrap();
    let x = noise(n, 3);
    let y = noise(n, 4);
    let gains: Vec<f64> = (0..n_one).map(|k| 1.0 / (1.0 + k as f64 / 400.0)).collect();
    let sigma = 0.2;
    let x_hat0 = prior.denoise(&x, sigma).unwrap();
    let terms = AudioCostTerms {
        y_tilde: &y,
        gains: &gains,
        prev_tail: None,
    };
    c.bench_function("guidance-gradient-32k", |b| {
        b.iter(|| std::hint::black_box(audio_cost_gradient(&terms, &x, sigma, &x_hat0, &prior).unwrap()))
    });
}

criterion_group!(kernels, bench_stft, bench_corpus, bench_scalar_kernels);
criterion_main!(kernels);
