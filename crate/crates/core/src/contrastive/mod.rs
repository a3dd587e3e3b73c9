//! Pretext pairs, the InfoNCE objective with batch and queue negatives, and
//! the momentum-encoder training loop for the retrieval encoder.

mod nce;
mod pairs;
mod queue;
mod train;

pub use nce::{gather_negatives, info_nce, info_nce_with_grad, NceGrad};
pub use pairs::{make_pair, PretextPair};
pub use queue::NegativeQueue;
pub use train::{train_retrieval, RetrievalTraining};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::EncoderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    pub queue_start_step: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub speech_mix_prob: f64,
    pub mix_snr_levels: Vec<f64>,
    pub segment_min: usize,
    pub segment_max: usize,
    pub encoder: EncoderConfig,
}

fn snr_levels_minus8_to_8() -> Vec<f64> {
    (-4..=4).map(|i| 2.0 * i as f64).collect()
}

impl Default for ContrastiveConfig {
    /// Desk-scale schedule.
    fn default() -> Self {
        Self {
            tau: 0.1,
            momentum: 0.9,
            queue_capacity: 1024,
            queue_start_step: 200,
            batch: 32,
            steps: 2000,
            lr: 1e-3,
            speech_mix_prob: 0.5,
            mix_snr_levels: snr_levels_minus8_to_8(),
            segment_min: 24_000,
            segment_max: 80_000,
            encoder: EncoderConfig::small(),
        }
    }
}

impl ContrastiveConfig {
    /// The full-scale schedule (batch 256, 100k steps, 32768-entry queue).
    pub fn full_scale() -> Self {
        Self {
            queue_capacity: 32_768,
            queue_start_step: 5000,
            batch: 256,
            steps: 100_000,
            lr: 2.5e-4,
            encoder: EncoderConfig::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "tau {} must be positive",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} outside [0, 1]",
                self.momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.speech_mix_prob) {
            return Err(Error::InvalidConfig(format!(
                "speech_mix_prob {} outside [0, 1]",
                self.speech_mix_prob
            )));
        }
        if self.mix_snr_levels.is_empty() || self.mix_snr_levels.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "mix_snr_levels must be non-empty and finite".into(),
            ));
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return Err(Error::InvalidConfig(format!(
                "segment bounds [{}, {}] invalid",
                self.segment_min, self.segment_max
            )));
        }
        if self.segment_min < self.encoder.fft_size {
            return Err(Error::InvalidConfig(
                "segments shorter than one encoder frame".into(),
            ));
        }
        if self.batch == 0 || self.queue_capacity == 0 {
            return Err(Error::InvalidConfig(
                "batch and queue_capacity must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lr {} must be positive",
                self.lr
            )));
        }
        self.encoder.validate()
    }
}
