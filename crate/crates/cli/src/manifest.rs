//! Run manifests: every output artifact is accompanied by a structured
//! record sufficient to reproduce it exactly. No timestamps or host
//! details — identical runs must produce identical manifests.

use serde::Serialize;

use geneq_core::filter::FilterParams;
use geneq_core::{Error, Result};

#[derive(Debug, Serialize)]
pub struct ScheduleManifest {
    pub sigma_start: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub steps: usize,
    pub s_churn: f64,
}

#[derive(Debug, Serialize)]
pub struct GuidanceManifest {
    pub xi_prime: f64,
    pub noise_reg_gamma: f64,
    pub weighting: String,
}

#[derive(Debug, Serialize)]
pub struct InnerLoopManifest {
    pub iterations_per_step: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub bcr_weight: f64,
    pub bcr_beta: f64,
}

#[derive(Debug, Serialize)]
pub struct BlocksManifest {
    pub segment_seconds: f64,
    pub overlap_fraction: f64,
    pub reestimate_filter_per_block: bool,
    pub carry_filter_across_blocks: bool,
}

/// Manifest for `restore`. Scalar fields first: the TOML encoder
/// requires tables after values.
#[derive(Debug, Serialize)]
pub struct RestoreManifest {
    pub command: String,
    pub mode: String,
    pub preset: String,
    pub seed: u64,
    pub input: String,
    pub output: String,
    pub sample_rate: u32,
    pub sampler_order: String,
    pub prior: Option<String>,
    pub reference: Option<String>,
    pub initial_filter: Option<String>,
    pub artifacts: Vec<String>,
    pub schedule: Option<ScheduleManifest>,
    pub guidance: Option<GuidanceManifest>,
    pub inner_loop: Option<InnerLoopManifest>,
    pub blocks: Option<BlocksManifest>,
    /// Final filter estimate of each block, in block order.
    pub block_filters: Vec<FilterParams>,
}

#[derive(Debug, Serialize)]
pub struct DegradeManifest {
    pub command: String,
    pub input: String,
    pub output: String,
    pub seed: u64,
    pub filter_preset: Option<String>,
    pub filter_file: Option<String>,
    pub snr_db: Option<f64>,
    pub artifacts: Vec<String>,
    /// Ground-truth degradation filter, when one was applied.
    pub truth_filter: Option<FilterParams>,
}

pub fn to_toml(manifest: &impl Serialize) -> Result<String> {
    toml::to_string_pretty(manifest).map_err(|e| Error::format("manifest", e.to_string()))
}

pub fn write_manifest(path: &std::path::Path, manifest: &impl Serialize) -> Result<()> {
    std::fs::write(path, to_toml(manifest)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}
