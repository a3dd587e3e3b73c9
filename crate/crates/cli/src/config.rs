use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nastar::adapt::{AblationMode, AdaptConfig, PretrainConfig, TEST_SNR_LEVELS};
use nastar::contrastive::ContrastiveConfig;
use nastar::synthdata::CorpusConfig;

/// Cohort size for the 200-signal desk pool; full-scale pools use 250.
pub const DESK_COHORT_SIZE: usize = 25;

/// Every stage configuration in one file. Missing keys take desk defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub contrastive: ContrastiveConfig,
    pub adapt: AdaptConfig,
    pub mode: AblationMode,
    pub alpha: f64,
    pub k: usize,
    pub test_snr_levels: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            pretrain: PretrainConfig::desk(),
            contrastive: ContrastiveConfig::default(),
            adapt: AdaptConfig::desk(),
            mode: AblationMode::Nastar,
            alpha: nastar::adapt::DEFAULT_ALPHA,
            k: DESK_COHORT_SIZE,
            test_snr_levels: TEST_SNR_LEVELS.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Keys present in `text` override the defaults at any depth, so a partial
    /// `"adapt"` section keeps the desk values for the keys it leaves out.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, serde_json::from_str(text)?);
        Ok(serde_json::from_value(base)?)
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 3, "adapt": {"steps": 7}, "mode": "retv"}"#)
            .unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.adapt.steps, 7);
        assert_eq!(c.adapt.lr, AdaptConfig::desk().lr);
        assert_eq!(c.mode, AblationMode::Retv);
        assert_eq!(c.k, DESK_COHORT_SIZE);
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(ExperimentConfig::from_json(r#"{"unknown_key": 1}"#).is_ok());
        assert!(ExperimentConfig::from_json(r#"{"k": "many"}"#).is_err());
    }
}
