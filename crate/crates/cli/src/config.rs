//! Run configuration: TOML schema, preset resolution, and aggregate
//! validation that reports every problem at once.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use geneq_core::filter::FilterParams;
use geneq_core::sampler::{
    piano_settings, vocals_settings, BlockArConfig, GuidanceConfig, InnerLoopConfig, NoiseSchedule,
    RestoreMode, RestoreSettings, SamplerOrder, SpectralWeighting,
};
use geneq_core::{Error, Result};

/// Restoration mode selected on the command line or in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Spectrum matching only: equalize toward a reference long-term
    /// average spectrum, no generative sampling.
    LtasEq,
    /// Blind joint filter estimation and posterior sampling.
    Blind,
    /// Blind restoration warm-started from the equalized observations.
    BlindLtasInit,
    /// Blind restoration with the equalized observations in both the
    /// warm start and the guidance cost.
    BlindLtasObjective,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "ltas-eq" => Some(Mode::LtasEq),
            "babe2" => Some(Mode::Blind),
            "babe2-ltas-init" => Some(Mode::BlindLtasInit),
            "babe2-ltas-obj" => Some(Mode::BlindLtasObjective),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::LtasEq => "ltas-eq",
            Mode::Blind => "babe2",
            Mode::BlindLtasInit => "babe2-ltas-init",
            Mode::BlindLtasObjective => "babe2-ltas-obj",
        }
    }

    pub fn needs_prior(&self) -> bool {
        *self != Mode::LtasEq
    }

    pub fn needs_reference(&self) -> bool {
        *self != Mode::Blind
    }

    pub fn restore_mode(&self) -> RestoreMode {
        match self {
            // ltas-eq never reaches the sampler; Plain is a placeholder.
            Mode::LtasEq | Mode::Blind => RestoreMode::Plain,
            Mode::BlindLtasInit => RestoreMode::LtasInit,
            Mode::BlindLtasObjective => RestoreMode::LtasObjective,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const MODE_NAMES: &str = "ltas-eq, babe2, babe2-ltas-init, babe2-ltas-obj";

/// Where the denoiser prior's power spectral density comes from.
#[derive(Debug, Clone)]
pub enum PriorSpec {
    /// Spectrum profile CSV (freq_hz,power rows).
    PsdCsv(PathBuf),
    /// WAV corpus whose averaged spectrum defines the density.
    Corpus(Vec<PathBuf>),
    /// Uniform density with the given per-sample power.
    White(f64),
}

/// Where the reference spectrum for equalization comes from.
#[derive(Debug, Clone)]
pub enum ReferenceSpec {
    LtasCsv(PathBuf),
    Corpus(Vec<PathBuf>),
}

/// Fully resolved restoration run: file schema + flag overrides +
/// preset defaults, validated as a whole.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub preset: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub prior: Option<PriorSpec>,
    pub reference: Option<ReferenceSpec>,
    pub settings: RestoreSettings,
    pub blocks: BlockArConfig,
    pub initial_filter_path: Option<PathBuf>,
}

/// Raw deserialized config file; every field optional so that flags
/// and presets can fill the gaps before validation.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub io: Option<IoSection>,
    pub prior: Option<PriorSection>,
    pub reference: Option<ReferenceSection>,
    pub schedule: Option<ScheduleSection>,
    pub guidance: Option<GuidanceSection>,
    pub inner_loop: Option<InnerLoopSection>,
    pub sampler: Option<SamplerSection>,
    pub blocks: Option<BlocksSection>,
    pub filter: Option<FilterSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub psd_csv: Option<PathBuf>,
    pub corpus: Option<Vec<PathBuf>>,
    pub white_power: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub ltas_csv: Option<PathBuf>,
    pub corpus: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub sigma_start: Option<f64>,
    pub sigma_min: Option<f64>,
    pub rho: Option<f64>,
    pub steps: Option<usize>,
    pub s_churn: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSection {
    pub xi_prime: Option<f64>,
    pub noise_reg_gamma: Option<f64>,
    pub weighting: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerLoopSection {
    pub iterations_per_step: Option<usize>,
    pub learning_rate: Option<f64>,
    pub bcr_weight: Option<f64>,
    pub bcr_beta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub order: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksSection {
    pub segment_seconds: Option<f64>,
    pub overlap_fraction: Option<f64>,
    pub reestimate_filter_per_block: Option<bool>,
    pub carry_filter_across_blocks: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub initial: Option<PathBuf>,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub preset: Option<String>,
}

pub fn load_config_file(path: &Path) -> Result<RunConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| {
        Error::Validation(vec![format!(
            "{}: {}",
            path.display(),
            e.message().trim()
        )])
    })
}

fn check_exists(path: &Path, what: &str, problems: &mut Vec<String>) {
    if !path.is_file() {
        problems.push(format!("{what} does not exist: {}", path.display()));
    }
}

fn push_error(problems: &mut Vec<String>, err: Error) {
    match err {
        Error::Validation(list) => problems.extend(list),
        other => problems.push(other.to_string()),
    }
}

/// Merge file, overrides, and preset defaults into a validated
/// [`RunConfig`]. Every detectable problem is reported.
pub fn resolve(file: RunConfigFile, over: Overrides) -> Result<RunConfig> {
    let mut problems = Vec::new();

    let preset = over
        .preset
        .or(file.preset)
        .unwrap_or_else(|| "piano".to_string());
    let base = match preset.as_str() {
        "piano" => Some(piano_settings()),
        "vocals" => Some(vocals_settings()),
        other => {
            problems.push(format!("unknown preset \"{other}\" (expected piano or vocals)"));
            None
        }
    };

    let mode_str = over.mode.or(file.mode);
    let mode = match &mode_str {
        None => {
            problems.push(format!("mode is required ({MODE_NAMES})"));
            None
        }
        Some(s) => match Mode::parse(s) {
            Some(m) => Some(m),
            None => {
                problems.push(format!("unknown mode \"{s}\" (expected {MODE_NAMES})"));
                None
            }
        },
    };

    let io = file.io.unwrap_or_default();
    let input = io.input;
    if let Some(p) = &input {
        check_exists(p, "input", &mut problems);
    } else {
        problems.push("io.input is required".into());
    }
    let output = over.output.or(io.output);
    if output.is_none() {
        problems.push("io.output is required (or pass --output)".into());
    }

    let prior = match file.prior {
        None => None,
        Some(section) => {
            let mut sources = Vec::new();
            if let Some(p) = section.psd_csv {
                check_exists(&p, "prior.psd_csv", &mut problems);
                sources.push(PriorSpec::PsdCsv(p));
            }
            if let Some(c) = section.corpus {
                if c.is_empty() {
                    problems.push("prior.corpus must not be empty".into());
                }
                for p in &c {
                    check_exists(p, "prior.corpus entry", &mut problems);
                }
                sources.push(PriorSpec::Corpus(c));
            }
            if let Some(w) = section.white_power {
                if !(w > 0.0) || !w.is_finite() {
                    problems.push(format!(
                        "prior.white_power must be positive and finite, got {w}"
                    ));
                }
                sources.push(PriorSpec::White(w));
            }
            if sources.len() > 1 {
                problems.push(
                    "prior must have exactly one of psd_csv, corpus, white_power".into(),
                );
            }
            sources.into_iter().next()
        }
    };

    let reference = match file.reference {
        None => None,
        Some(section) => {
            let mut sources = Vec::new();
            if let Some(p) = section.ltas_csv {
                check_exists(&p, "reference.ltas_csv", &mut problems);
                sources.push(ReferenceSpec::LtasCsv(p));
            }
            if let Some(c) = section.corpus {
                if c.is_empty() {
                    problems.push("reference.corpus must not be empty".into());
                }
                for p in &c {
                    check_exists(p, "reference.corpus entry", &mut problems);
                }
                sources.push(ReferenceSpec::Corpus(c));
            }
            if sources.len() > 1 {
                problems.push("reference must have exactly one of ltas_csv, corpus".into());
            }
            sources.into_iter().next()
        }
    };

    if let Some(m) = mode {
        if m.needs_prior() && prior.is_none() {
            problems.push(format!("mode {m} requires a [prior] section"));
        }
        if m.needs_reference() && reference.is_none() {
            problems.push(format!("mode {m} requires a [reference] section"));
        }
    }

    // Settings: preset base with per-field overrides.
    let settings = base.as_ref().map(|base| {
        let s = file.schedule.unwrap_or_default();
        let schedule = NoiseSchedule::build(
            s.sigma_start.unwrap_or_else(|| base.schedule.sigma_start()),
            s.sigma_min.unwrap_or_else(|| base.schedule.sigma_min()),
            s.rho.unwrap_or_else(|| base.schedule.rho()),
            s.steps.unwrap_or_else(|| base.schedule.num_steps()),
        )
        .and_then(|sched| sched.with_churn(s.s_churn.unwrap_or_else(|| base.schedule.s_churn())));
        let schedule = match schedule {
            Ok(sched) => Some(sched),
            Err(e) => {
                push_error(&mut problems, e);
                None
            }
        };

        let g = file.guidance.unwrap_or_default();
        let weighting = match g.weighting.as_deref() {
            None => Some(base.guidance.weighting),
            Some("flat") => Some(SpectralWeighting::Flat),
            Some("inverse-magnitude") => Some(SpectralWeighting::InverseMagnitude),
            Some(other) => {
                problems.push(format!(
                    "unknown guidance.weighting \"{other}\" (expected flat or inverse-magnitude)"
                ));
                None
            }
        };
        let guidance = GuidanceConfig {
            xi_prime: g.xi_prime.unwrap_or(base.guidance.xi_prime),
            noise_reg_gamma: g.noise_reg_gamma.unwrap_or(base.guidance.noise_reg_gamma),
            mode: mode.map(|m| m.restore_mode()).unwrap_or(RestoreMode::Plain),
            weighting: weighting.unwrap_or(base.guidance.weighting),
        };
        if let Err(e) = guidance.validate() {
            push_error(&mut problems, e);
        }

        let i = file.inner_loop.unwrap_or_default();
        let mut inner = InnerLoopConfig {
            iterations_per_step: i
                .iterations_per_step
                .unwrap_or(base.inner.iterations_per_step),
            ..base.inner.clone()
        };
        if let Some(lr) = i.learning_rate {
            inner.adam.learning_rate = lr;
        }
        if let Some(w) = i.bcr_weight {
            inner.bcr.weight = w;
        }
        if let Some(b) = i.bcr_beta {
            inner.bcr.beta = b;
        }
        if let Err(e) = inner.validate() {
            push_error(&mut problems, e);
        }

        let order = match file.sampler.unwrap_or_default().order.as_deref() {
            None => base.order,
            Some("euler") => SamplerOrder::Euler,
            Some("heun") => SamplerOrder::Heun,
            Some(other) => {
                problems.push(format!(
                    "unknown sampler.order \"{other}\" (expected euler or heun)"
                ));
                base.order
            }
        };

        (schedule, guidance, inner, order)
    });

    let b = file.blocks.unwrap_or_default();
    let blocks = BlockArConfig {
        segment_seconds: b.segment_seconds.unwrap_or(5.0),
        overlap_fraction: b.overlap_fraction.unwrap_or(0.10),
        reestimate_filter_per_block: b.reestimate_filter_per_block.unwrap_or(true),
        carry_filter_across_blocks: b.carry_filter_across_blocks.unwrap_or(true),
    };
    if let Err(e) = blocks.validate() {
        push_error(&mut problems, e);
    }

    let initial_filter_path = file.filter.unwrap_or_default().initial;
    let initial_filter = match &initial_filter_path {
        None => None,
        Some(p) => {
            if p.is_file() {
                match FilterParams::load(p) {
                    Ok(f) => Some(f),
                    Err(e) => {
                        push_error(&mut problems, e);
                        None
                    }
                }
            } else {
                problems.push(format!("filter.initial does not exist: {}", p.display()));
                None
            }
        }
    };

    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }

    let (schedule, guidance, inner, order) = settings.expect("preset resolved");
    Ok(RunConfig {
        mode: mode.expect("mode resolved"),
        seed: over.seed.or(file.seed).unwrap_or(0),
        preset,
        input: input.expect("input resolved"),
        output: output.expect("output resolved"),
        prior,
        reference,
        settings: RestoreSettings {
            schedule: schedule.expect("schedule resolved"),
            guidance,
            inner,
            order,
            initial_filter,
        },
        blocks,
        initial_filter_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_file(dir: &Path) -> RunConfigFile {
        let input = dir.join("in.wav");
        std::fs::write(&input, b"placeholder").unwrap();
        RunConfigFile {
            mode: Some("babe2".into()),
            io: Some(IoSection {
                input: Some(input),
                output: Some(dir.join("out.wav")),
            }),
            prior: Some(PriorSection {
                white_power: Some(1.0),
                ..PriorSection::default()
            }),
            ..RunConfigFile::default()
        }
    }

    #[test]
    fn minimal_blind_config_resolves_with_piano_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = resolve(minimal_file(dir.path()), Overrides::default()).unwrap();
        assert_eq!(cfg.mode, Mode::Blind);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.preset, "piano");
        assert_eq!(cfg.settings.schedule.num_steps(), 51);
        assert_eq!(cfg.settings.guidance.xi_prime, 1.0);
        assert_eq!(cfg.settings.guidance.noise_reg_gamma, 0.25);
        assert_eq!(cfg.settings.inner.iterations_per_step, 100);
    }

    #[test]
    fn vocals_preset_changes_schedule_and_guidance() {
        let dir = tempfile::tempdir().unwrap();
        let mut file = minimal_file(dir.path());
        file.preset = Some("vocals".into());
        let cfg = resolve(file, Overrides::default()).unwrap();
        assert_eq!(cfg.settings.schedule.sigma_start(), 10.0);
        assert_eq!(cfg.settings.guidance.xi_prime, 0.5);
        assert_eq!(cfg.settings.guidance.noise_reg_gamma, 1.0);
    }

    #[test]
    fn flag_overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut file = minimal_file(dir.path());
        file.seed = Some(7);
        let over = Overrides {
            seed: Some(9),
            mode: Some("ltas-eq".into()),
            ..Overrides::default()
        };
        // ltas-eq requires a reference; build one.
        let mut file2 = file.clone();
        file2.reference = Some(ReferenceSection {
            corpus: Some(vec![dir.path().join("in.wav")]),
            ..ReferenceSection::default()
        });
        let cfg = resolve(file2, over).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, Mode::LtasEq);
    }

    #[test]
    fn all_problems_are_reported_together() {
        let file = RunConfigFile {
            mode: Some("nonsense".into()),
            schedule: Some(ScheduleSection {
                sigma_start: Some(-1.0),
                ..ScheduleSection::default()
            }),
            blocks: Some(BlocksSection {
                overlap_fraction: Some(0.9),
                ..BlocksSection::default()
            }),
            ..RunConfigFile::default()
        };
        let err = resolve(file, Overrides::default()).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("unknown mode"), "{text}");
        assert!(text.contains("io.input"), "{text}");
        assert!(text.contains("io.output"), "{text}");
        assert!(text.contains("sigma_start"), "{text}");
        assert!(text.contains("overlap fraction"), "{text}");
    }

    #[test]
    fn modes_map_to_interface_strings() {
        for s in ["ltas-eq", "babe2", "babe2-ltas-init", "babe2-ltas-obj"] {
            assert_eq!(Mode::parse(s).unwrap().as_str(), s);
        }
        assert!(Mode::parse("other").is_none());
    }
}
