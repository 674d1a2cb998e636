//! Subcommand implementations.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use rayon::prelude::*;

use geneq_core::denoiser::GaussianPsdPrior;
use geneq_core::fft;
use geneq_core::filter::{default_f_max, FilterParams};
use geneq_core::ltas::{
    compute_ltas, corpus_ltas, ltas_distance, ltas_eq_filter, CacheKeyHasher, LtasProfile,
};
use geneq_core::sampler::{restore_recording, SamplerOrder, SpectralWeighting};
use geneq_core::signal::{apply_zero_phase_gains, StftConfig};
use geneq_core::wav::{read_wav, write_wav, LoadedWav};
use geneq_core::{Error, Result, Signal};

use crate::config::{self, Mode, Overrides, PriorSpec, ReferenceSpec, RunConfig};
use crate::manifest::{
    write_manifest, BlocksManifest, DegradeManifest, GuidanceManifest, InnerLoopManifest,
    RestoreManifest, ScheduleManifest,
};

/// Replace the final extension: `out.wav` + `manifest.toml` gives
/// `out.manifest.toml`.
fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn read_input(path: &Path) -> Result<LoadedWav> {
    let loaded = read_wav(path)?;
    if loaded.was_mixed_down() {
        eprintln!(
            "note: {} has {} channels; mixed down to mono",
            path.display(),
            loaded.source_channels
        );
    }
    Ok(loaded)
}

/// Load a WAV corpus, insisting every file matches the given sample
/// rate; problems are aggregated.
fn read_corpus(paths: &[PathBuf], expect_rate: Option<u32>) -> Result<Vec<Signal>> {
    let mut signals = Vec::with_capacity(paths.len());
    let mut problems = Vec::new();
    for p in paths {
        let loaded = read_input(p)?;
        if let Some(rate) = expect_rate {
            if loaded.signal.sample_rate() != rate {
                problems.push(format!(
                    "{}: sample rate {} Hz does not match {} Hz",
                    p.display(),
                    loaded.signal.sample_rate(),
                    rate
                ));
                continue;
            }
        }
        signals.push(loaded.signal);
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    Ok(signals)
}

fn response_csv(params: &FilterParams, points: usize) -> Result<String> {
    let lo = params.f_min_hz().max(1.0);
    let hi = params.f_max_hz();
    let freqs: Vec<f64> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1).max(1) as f64;
            lo * (hi / lo).powf(t)
        })
        .collect();
    let db = params.eval_response_db(&freqs)?;
    let mut out = String::from("freq_hz,gain_db\n");
    for (f, d) in freqs.iter().zip(&db) {
        out.push_str(&format!("{f:.6},{d:.9}\n"));
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn weighting_name(w: SpectralWeighting) -> &'static str {
    match w {
        SpectralWeighting::Flat => "flat",
        SpectralWeighting::InverseMagnitude => "inverse-magnitude",
    }
}

fn order_name(o: SamplerOrder) -> &'static str {
    match o {
        SamplerOrder::Euler => "euler",
        SamplerOrder::Heun => "heun",
    }
}

fn load_reference(spec: &ReferenceSpec, sample_rate: u32) -> Result<LtasProfile> {
    let cfg = StftConfig::for_sample_rate(sample_rate)?;
    match spec {
        ReferenceSpec::LtasCsv(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            LtasProfile::from_csv_str(&text, sample_rate, cfg.window_size())
        }
        ReferenceSpec::Corpus(paths) => {
            let signals = read_corpus(paths, Some(sample_rate))?;
            corpus_ltas(&signals, cfg)
        }
    }
}

fn build_prior(spec: &PriorSpec, sample_rate: u32, n_fft: usize) -> Result<GaussianPsdPrior> {
    match spec {
        PriorSpec::White(power) => GaussianPsdPrior::white(*power, n_fft),
        PriorSpec::PsdCsv(path) => {
            let cfg = StftConfig::for_sample_rate(sample_rate)?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let profile = LtasProfile::from_csv_str(&text, sample_rate, cfg.window_size())?;
            GaussianPsdPrior::new(profile.to_psd(n_fft)?)
        }
        PriorSpec::Corpus(paths) => {
            let cfg = StftConfig::for_sample_rate(sample_rate)?;
            let signals = read_corpus(paths, Some(sample_rate))?;
            let profile = corpus_ltas(&signals, cfg)?;
            GaussianPsdPrior::new(profile.to_psd(n_fft)?)
        }
    }
}

fn prior_description(spec: &PriorSpec) -> String {
    match spec {
        PriorSpec::PsdCsv(p) => format!("psd_csv:{}", p.display()),
        PriorSpec::Corpus(c) => format!("corpus:{} files", c.len()),
        PriorSpec::White(w) => format!("white:{w}"),
    }
}

fn reference_description(spec: &ReferenceSpec) -> String {
    match spec {
        ReferenceSpec::LtasCsv(p) => format!("ltas_csv:{}", p.display()),
        ReferenceSpec::Corpus(c) => format!("corpus:{} files", c.len()),
    }
}

pub fn cmd_restore(config_path: &Path, overrides: Overrides) -> Result<()> {
    let file = config::load_config_file(config_path)?;
    let cfg = config::resolve(file, overrides)?;
    let loaded = read_input(&cfg.input)?;
    let y = &loaded.signal;
    let sr = y.sample_rate();

    let reference = match &cfg.reference {
        Some(spec) => Some(load_reference(spec, sr)?),
        None => None,
    };

    match cfg.mode {
        Mode::LtasEq => run_ltas_eq(&cfg, &loaded, reference.as_ref().expect("validated")),
        _ => run_blind(&cfg, &loaded, reference.as_ref()),
    }
}

/// Pure spectrum matching: equalize the input toward the reference
/// long-term average spectrum. Deterministic, no sampling.
fn run_ltas_eq(cfg: &RunConfig, loaded: &LoadedWav, reference: &LtasProfile) -> Result<()> {
    let y = &loaded.signal;
    let stft_cfg = StftConfig::for_sample_rate(y.sample_rate())?;
    let input_profile = compute_ltas(y, stft_cfg)?;
    let h = ltas_eq_filter(&input_profile, reference)?;
    let restored = geneq_core::ltas::apply_inverse_eq(y, &h, &input_profile)?;
    write_wav(&cfg.output, &restored, loaded.format)?;

    let eq_csv_path = sidecar(&cfg.output, "eq-response.csv");
    let mut eq_csv = String::from("freq_hz,gain_db\n");
    for (f, g) in input_profile.freqs_hz().iter().zip(&h) {
        eq_csv.push_str(&format!("{f:.6},{:.9}\n", 20.0 * g.log10()));
    }
    write_text(&eq_csv_path, &eq_csv)?;

    let manifest = RestoreManifest {
        command: "restore".into(),
        mode: cfg.mode.as_str().into(),
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        input: cfg.input.display().to_string(),
        output: cfg.output.display().to_string(),
        sample_rate: y.sample_rate(),
        sampler_order: order_name(cfg.settings.order).into(),
        prior: None,
        reference: cfg.reference.as_ref().map(reference_description),
        initial_filter: None,
        artifacts: vec![eq_csv_path.display().to_string()],
        schedule: None,
        guidance: None,
        inner_loop: None,
        blocks: None,
        block_filters: Vec::new(),
    };
    write_manifest(&sidecar(&cfg.output, "manifest.toml"), &manifest)?;
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn run_blind(cfg: &RunConfig, loaded: &LoadedWav, reference: Option<&LtasProfile>) -> Result<()> {
    let y = &loaded.signal;
    let sr = y.sample_rate();
    let block_len = cfg.blocks.block_len(y.len(), sr);
    let n_fft = fft::full_fft_len(block_len);
    let prior_spec = cfg.prior.as_ref().expect("validated");
    let prior = build_prior(prior_spec, sr, n_fft)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let result = restore_recording(y, &prior, &cfg.settings, reference, &cfg.blocks, &mut rng)?;
    write_wav(&cfg.output, &result.restored, loaded.format)?;

    let mut artifacts = Vec::new();
    for (k, (filter, trace)) in result
        .block_filters
        .iter()
        .zip(&result.block_traces)
        .enumerate()
    {
        let filter_path = sidecar(&cfg.output, &format!("filter-block{k}.toml"));
        filter.save(&filter_path)?;
        let response_path = sidecar(&cfg.output, &format!("response-block{k}.csv"));
        write_text(&response_path, &response_csv(filter, 200)?)?;
        let trace_path = sidecar(&cfg.output, &format!("trace-block{k}.csv"));
        write_text(&trace_path, &trace.to_csv_string())?;
        artifacts.extend([
            filter_path.display().to_string(),
            response_path.display().to_string(),
            trace_path.display().to_string(),
        ]);
    }

    let s = &cfg.settings;
    let manifest = RestoreManifest {
        command: "restore".into(),
        mode: cfg.mode.as_str().into(),
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        input: cfg.input.display().to_string(),
        output: cfg.output.display().to_string(),
        sample_rate: sr,
        sampler_order: order_name(s.order).into(),
        prior: Some(prior_description(prior_spec)),
        reference: cfg.reference.as_ref().map(reference_description),
        initial_filter: cfg
            .initial_filter_path
            .as_ref()
            .map(|p| p.display().to_string()),
        artifacts,
        schedule: Some(ScheduleManifest {
            sigma_start: s.schedule.sigma_start(),
            sigma_min: s.schedule.sigma_min(),
            rho: s.schedule.rho(),
            steps: s.schedule.num_steps(),
            s_churn: s.schedule.s_churn(),
        }),
        guidance: Some(GuidanceManifest {
            xi_prime: s.guidance.xi_prime,
            noise_reg_gamma: s.guidance.noise_reg_gamma,
            weighting: weighting_name(s.guidance.weighting).into(),
        }),
        inner_loop: Some(InnerLoopManifest {
            iterations_per_step: s.inner.iterations_per_step,
            learning_rate: s.inner.adam.learning_rate,
            beta1: s.inner.adam.beta1,
            beta2: s.inner.adam.beta2,
            epsilon: s.inner.adam.epsilon,
            bcr_weight: s.inner.bcr.weight,
            bcr_beta: s.inner.bcr.beta,
        }),
        blocks: Some(BlocksManifest {
            segment_seconds: cfg.blocks.segment_seconds,
            overlap_fraction: cfg.blocks.overlap_fraction,
            reestimate_filter_per_block: cfg.blocks.reestimate_filter_per_block,
            carry_filter_across_blocks: cfg.blocks.carry_filter_across_blocks,
        }),
        block_filters: result.block_filters.clone(),
    };
    write_manifest(&sidecar(&cfg.output, "manifest.toml"), &manifest)?;
    println!(
        "wrote {} ({} block{})",
        cfg.output.display(),
        result.block_filters.len(),
        if result.block_filters.len() == 1 { "" } else { "s" }
    );
    Ok(())
}

/// Mid-band coloration with a 4 kHz band limit, loosely after worn
/// shellac playback chains.
fn gramophone_params(sample_rate: u32) -> Result<FilterParams> {
    FilterParams::new(
        vec![200.0, 800.0, 1000.0, 2500.0, 4000.0],
        vec![2.0, -4.0, 1.5, -12.0],
        2,
        20.0,
        default_f_max(sample_rate)?,
    )
}

pub struct DegradeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub filter_file: Option<PathBuf>,
    pub filter_preset: Option<String>,
    pub snr_db: Option<f64>,
    pub seed: u64,
}

pub fn cmd_degrade(args: &DegradeArgs) -> Result<()> {
    let mut problems = Vec::new();
    if !args.input.is_file() {
        problems.push(format!("input does not exist: {}", args.input.display()));
    }
    if let Some(snr) = args.snr_db {
        if !snr.is_finite() {
            problems.push(format!("snr must be finite, got {snr}"));
        }
    }
    let preset = match (&args.filter_file, args.filter_preset.as_deref()) {
        (Some(_), Some(_)) => {
            problems.push("give either --filter or --filter-preset, not both".into());
            None
        }
        (None, None) => Some("flat"),
        (None, Some(p @ ("flat" | "gramophone"))) => Some(p),
        (None, Some(other)) => {
            problems.push(format!(
                "unknown filter preset \"{other}\" (expected flat or gramophone)"
            ));
            None
        }
        (Some(p), None) => {
            if !p.is_file() {
                problems.push(format!("filter file does not exist: {}", p.display()));
            }
            None
        }
    };
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }

    let loaded = read_input(&args.input)?;
    let y = &loaded.signal;
    let sr = y.sample_rate();

    let params: Option<FilterParams> = match (&args.filter_file, preset) {
        (Some(path), _) => Some(FilterParams::load(path)?),
        (None, Some("gramophone")) => Some(gramophone_params(sr)?),
        // "flat" means no filtering at all: a true bypass rather than a
        // parametric filter whose out-of-band tails would still cut.
        _ => None,
    };

    let filtered = match &params {
        Some(p) => {
            let gains = p.response_gains_for_fft(fft::full_fft_len(y.len()), sr)?;
            apply_zero_phase_gains(y, &gains)?
        }
        None => y.clone(),
    };

    let degraded = match args.snr_db {
        None => filtered,
        Some(snr) => {
            let power = filtered.samples().iter().map(|v| v * v).sum::<f64>()
                / filtered.len().max(1) as f64;
            let sigma = (power * 10f64.powf(-snr / 10.0)).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let normal = rand_distr::StandardNormal;
            let noisy: Vec<f64> = filtered
                .samples()
                .iter()
                .map(|&v| v + sigma * <rand_distr::StandardNormal as Distribution<f64>>::sample(&normal, &mut rng))
                .collect();
            Signal::new(noisy, sr)?
        }
    };

    write_wav(&args.output, &degraded, loaded.format)?;

    let mut artifacts = Vec::new();
    if let Some(p) = &params {
        let truth_path = sidecar(&args.output, "truth-filter.toml");
        p.save(&truth_path)?;
        artifacts.push(truth_path.display().to_string());
    }
    let manifest = DegradeManifest {
        command: "degrade".into(),
        input: args.input.display().to_string(),
        output: args.output.display().to_string(),
        seed: args.seed,
        filter_preset: match args.filter_file {
            Some(_) => None,
            None => Some(preset.unwrap_or("flat").to_string()),
        },
        filter_file: args.filter_file.as_ref().map(|p| p.display().to_string()),
        snr_db: args.snr_db,
        artifacts,
        truth_filter: params,
    };
    write_manifest(&sidecar(&args.output, "manifest.toml"), &manifest)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

fn require_existing(paths: &[PathBuf]) -> Result<()> {
    let problems: Vec<String> = paths
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| format!("file does not exist: {}", p.display()))
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

/// All files must share one sample rate; problems are aggregated.
fn require_same_rate(paths: &[PathBuf], signals: &[Signal]) -> Result<u32> {
    let sr = signals[0].sample_rate();
    let mismatched: Vec<String> = paths
        .iter()
        .zip(signals)
        .filter(|(_, s)| s.sample_rate() != sr)
        .map(|(p, s)| {
            format!(
                "{}: sample rate {} Hz does not match {} Hz",
                p.display(),
                s.sample_rate(),
                sr
            )
        })
        .collect();
    if mismatched.is_empty() {
        Ok(sr)
    } else {
        Err(Error::Validation(mismatched))
    }
}

/// Cache key: sample rate, analysis window, and the exact decoded
/// samples of every corpus file, in order.
fn corpus_cache_key(signals: &[Signal], cfg: StftConfig) -> u64 {
    let mut hasher = CacheKeyHasher::default();
    hasher.update(&(signals.len() as u64).to_le_bytes());
    hasher.update(&(cfg.window_size() as u64).to_le_bytes());
    for s in signals {
        hasher.update(&s.sample_rate().to_le_bytes());
        hasher.update(&(s.len() as u64).to_le_bytes());
        for v in s.samples() {
            hasher.update(&v.to_bits().to_le_bytes());
        }
    }
    hasher.finish()
}

pub struct LtasArgs {
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
}

pub fn cmd_ltas(args: &LtasArgs) -> Result<()> {
    if args.inputs.is_empty() {
        return Err(Error::Validation(vec!["corpus must not be empty".into()]));
    }
    require_existing(&args.inputs)?;
    let signals = read_corpus(&args.inputs, None)?;
    let sr = require_same_rate(&args.inputs, &signals)?;

    let cfg = StftConfig::for_sample_rate(sr)?;
    let key = corpus_cache_key(&signals, cfg);
    let cache_path = sidecar(&args.output, "cache");
    let cached = if cache_path.is_file() {
        // A stale or unreadable cache is recomputed, never fatal.
        match LtasProfile::load_cache(&cache_path, key) {
            Ok(hit) => hit,
            Err(e) => {
                eprintln!("note: ignoring unreadable cache {}: {e}", cache_path.display());
                None
            }
        }
    } else {
        None
    };
    let profile = match cached {
        Some(cached) => {
            eprintln!("note: using cached profile {}", cache_path.display());
            cached
        }
        None => {
            let profile = corpus_ltas(&signals, cfg)?;
            profile.save_cache(&cache_path, key)?;
            profile
        }
    };

    write_text(&args.output, &profile.to_csv_string())?;
    println!(
        "wrote {} ({} bins from {} file{})",
        args.output.display(),
        profile.freqs_hz().len(),
        args.inputs.len(),
        if args.inputs.len() == 1 { "" } else { "s" }
    );
    Ok(())
}

pub struct EvalArgs {
    pub files: Vec<PathBuf>,
    pub reference: PathBuf,
    pub output: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if args.files.is_empty() {
        return Err(Error::Validation(vec![
            "at least one file to evaluate is required".into(),
        ]));
    }
    require_existing(&args.files)?;
    if !args.reference.is_file() {
        return Err(Error::Validation(vec![format!(
            "reference profile does not exist: {}",
            args.reference.display()
        )]));
    }
    let signals = read_corpus(&args.files, None)?;
    let sr = require_same_rate(&args.files, &signals)?;
    let cfg = StftConfig::for_sample_rate(sr)?;
    let text = std::fs::read_to_string(&args.reference)
        .map_err(|e| Error::io(args.reference.display().to_string(), e))?;
    let reference = LtasProfile::from_csv_str(&text, sr, cfg.window_size())?;

    let distances = eval_distances(&signals, &reference, cfg)?;

    let mut csv = String::from("path,distance_db\n");
    println!("{:<60} {:>12}", "file", "distance dB");
    for (path, d) in args.files.iter().zip(&distances) {
        println!("{:<60} {:>12.3}", path.display().to_string(), d);
        csv.push_str(&format!("{},{d:.6}\n", path.display()));
    }
    let mut sorted = distances.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mean = distances.iter().sum::<f64>() / distances.len() as f64;
    println!("{:<60} {:>12.3}", "(median)", median);
    println!("{:<60} {:>12.3}", "(mean)", mean);
    csv.push_str(&format!("(median),{median:.6}\n(mean),{mean:.6}\n"));

    if let Some(out) = &args.output {
        write_text(out, &csv)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

/// Per-file distance against the reference, in input order.
fn eval_distances(
    signals: &[Signal],
    reference: &LtasProfile,
    cfg: StftConfig,
) -> Result<Vec<f64>> {
    signals
        .par_iter()
        .map(|s| ltas_distance(&compute_ltas(s, cfg)?, reference))
        .collect()
}

pub struct ShowFilterArgs {
    pub filter: PathBuf,
    pub output: PathBuf,
    pub points: usize,
}

pub fn cmd_show_filter(args: &ShowFilterArgs) -> Result<()> {
    let mut problems = Vec::new();
    if !args.filter.is_file() {
        problems.push(format!("filter file does not exist: {}", args.filter.display()));
    }
    if args.points < 2 {
        problems.push(format!("points must be at least 2, got {}", args.points));
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let params = FilterParams::load(&args.filter)?;
    write_text(&args.output, &response_csv(&params, args.points)?)?;
    println!("wrote {}", args.output.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_replaces_only_the_final_extension() {
        assert_eq!(
            sidecar(Path::new("runs/out.wav"), "manifest.toml"),
            Path::new("runs/out.manifest.toml")
        );
        assert_eq!(
            sidecar(Path::new("out.wav"), "filter-block0.toml"),
            Path::new("out.filter-block0.toml")
        );
    }

    #[test]
    fn gramophone_preset_is_band_limited_with_coloration() {
        let p = gramophone_params(22050).unwrap();
        assert_eq!(p.band_limit_hz(), 4000.0);
        let db = p
            .eval_response_db(&[1000.0, 8000.0])
            .unwrap();
        assert!(db[0].abs() < 1e-9, "anchor gain must be 0 dB");
        assert!(db[1] < -40.0, "response above the band limit must be cut");
    }

    #[test]
    fn response_csv_has_header_and_rows() {
        let p = FilterParams::init_default(22050).unwrap();
        let csv = response_csv(&p, 50).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 51);
        assert_eq!(lines[0], "freq_hz,gain_db");
    }

    #[test]
    fn cache_key_tracks_content_and_grid() {
        let sr = 22050;
        let cfg = StftConfig::for_sample_rate(sr).unwrap();
        let a = Signal::new(vec![0.1; 4096], sr).unwrap();
        let b = Signal::new(vec![0.2; 4096], sr).unwrap();
        let k1 = corpus_cache_key(std::slice::from_ref(&a), cfg);
        let k2 = corpus_cache_key(std::slice::from_ref(&b), cfg);
        let k3 = corpus_cache_key(&[a.clone(), b.clone()], cfg);
        assert_ne!(k1, k2);
        assert_ne!(k1, k3);
        assert_eq!(k1, corpus_cache_key(std::slice::from_ref(&a), cfg));
    }
}
