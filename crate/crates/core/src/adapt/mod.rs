//! Pseudo-noise extraction, collaborative sampling, enhancement pretraining
//! and one-shot adaptation.

mod experiment;
mod pipeline;
mod sampler;
mod train;

pub use experiment::{query_mixture, target_test_set, TEST_SNR_LEVELS};
pub use pipeline::{
    nastar_pipeline, waveform_sha256, AblationMode, Extractor, PipelineConfig, PipelineInputs,
    PipelineOutput, Retriever,
    RunManifest,
};
pub use sampler::{sample_noise, CollaborativeSampler, NoiseChoice, NoisePool, DEFAULT_ALPHA};
pub use train::{adapt, extract_pseudo_noise, pretrain, Adapted, Pretrained};

use serde::{Deserialize, Serialize};

use crate::dsp::MultiResConfig;
use crate::error::{Error, Result};
use crate::models::ExtractorConfig;

/// Log-magnitude floor of the desk schedules. Magnitudes of -22 dBFS
/// signals sit around 1 at these FFT sizes.
pub const DESK_LOG_FLOOR: f64 = 0.1;

fn levels(lo: i32, hi: i32, step: i32) -> Vec<f64> {
    (lo..=hi).step_by(step as usize).map(f64::from).collect()
}

fn check_common(
    name: &str,
    snr_levels: &[f64],
    lr: f64,
    batch: usize,
    clip_len: usize,
) -> Result<()> {
    if snr_levels.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{name}: empty SNR level list"
        )));
    }
    if snr_levels.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{name} SNR levels")));
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "{name}: lr {lr} must be positive"
        )));
    }
    if batch == 0 || clip_len == 0 {
        return Err(Error::InvalidConfig(format!(
            "{name}: batch and clip_len must be positive"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub snr_levels: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Training clip length in samples.
    pub clip_len: usize,
    pub model: ExtractorConfig,
    pub loss: MultiResConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            snr_levels: levels(0, 12, 3),
            steps: 2000,
            lr: 2e-4,
            batch: 8,
            clip_len: 16_000,
            model: ExtractorConfig::default(),
            loss: MultiResConfig::default(),
        }
    }
}

impl PretrainConfig {
    /// Shortened schedule for single-core runs: 0.5 s clips, a higher
    /// learning rate and a coarser log-magnitude floor.
    pub fn desk() -> Self {
        Self {
            steps: 800,
            lr: 3e-3,
            clip_len: 8000,
            loss: MultiResConfig {
                log_floor: DESK_LOG_FLOOR,
                ..MultiResConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_common(
            "pretrain",
            &self.snr_levels,
            self.lr,
            self.batch,
            self.clip_len,
        )?;
        self.model.validate()?;
        self.loss.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub snr_levels: Vec<f64>,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub clip_len: usize,
    pub model: ExtractorConfig,
    pub loss: MultiResConfig,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            snr_levels: levels(-4, 8, 2),
            steps: 2000,
            lr: 1e-4,
            batch: 8,
            clip_len: 16_000,
            model: ExtractorConfig::default(),
            loss: MultiResConfig::default(),
        }
    }
}

impl AdaptConfig {
    /// Desk schedule matching [`PretrainConfig::desk`]; the loss is the same.
    pub fn desk() -> Self {
        Self {
            steps: 600,
            lr: 2e-3,
            clip_len: 8000,
            loss: PretrainConfig::desk().loss,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_common(
            "adapt",
            &self.snr_levels,
            self.lr,
            self.batch,
            self.clip_len,
        )?;
        self.model.validate()?;
        self.loss.validate()
    }
}
