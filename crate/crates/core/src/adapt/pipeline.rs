use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sampler::{CollaborativeSampler, NoisePool, DEFAULT_ALPHA};
use super::train::{adapt, extract_pseudo_noise};
use super::AdaptConfig;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::models::{retrieval_embed, EncoderConfig, ExtractorConfig, ParamSet};
use crate::retrieval::{
    encoder_fingerprint, top_k, CohortEntry, EmbeddingIndex, DEFAULT_COHORT_SIZE,
};
use crate::rng::{seeded, sha256_hex};

/// How the adaptation noise is prepared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    /// Pseudo-noise plus retrieved cohort at the configured alpha.
    Nastar,
    /// Pseudo-noise only.
    Extr,
    /// The query's true noise only.
    Gt,
    /// Pseudo-noise plus uniform draws from the whole pool.
    All,
    /// Retrieved cohort only.
    Retv,
    /// The held-out target noise itself.
    Opt,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Nastar,
        AblationMode::Extr,
        AblationMode::Gt,
        AblationMode::All,
        AblationMode::Retv,
        AblationMode::Opt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Nastar => "nastar",
            AblationMode::Extr => "extr",
            AblationMode::Gt => "gt",
            AblationMode::All => "all",
            AblationMode::Retv => "retv",
            AblationMode::Opt => "opt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(name))
    }

    /// Effective alpha given the configured one.
    pub fn alpha(self, configured: f64) -> f64 {
        match self {
            AblationMode::Nastar | AblationMode::All => configured,
            AblationMode::Extr | AblationMode::Gt | AblationMode::Opt => 0.0,
            AblationMode::Retv => 1.0,
        }
    }

    pub fn uses_retrieval(self) -> bool {
        matches!(self, AblationMode::Nastar | AblationMode::Retv)
    }

    fn uses_reference_noise(self) -> bool {
        matches!(self, AblationMode::Gt | AblationMode::Opt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: AblationMode,
    pub alpha: f64,
    pub k: usize,
    pub seed: u64,
    pub adapt: AdaptConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: AblationMode::Nastar,
            alpha: DEFAULT_ALPHA,
            k: DEFAULT_COHORT_SIZE,
            seed: 0,
            adapt: AdaptConfig::default(),
        }
    }
}

#[derive(Clone, Copy)]
pub struct Extractor<'a> {
    pub params: &'a ParamSet,
    pub config: ExtractorConfig,
}

#[derive(Clone, Copy)]
pub struct Retriever<'a> {
    pub encoder: &'a ParamSet,
    pub config: EncoderConfig,
    pub index: &'a EmbeddingIndex,
}

/// Components a mode does not use may be left out.
pub struct PipelineInputs<'a> {
    pub query_noisy: &'a Waveform,
    pub extractor: Option<Extractor<'a>>,
    pub retriever: Option<Retriever<'a>>,
    /// Noise signals by id: every index entry, and the whole pool for `all`.
    pub pool: &'a NoisePool,
    pub speech: &'a [Waveform],
    /// The query's true noise for `gt`, the held-out target noise for `opt`.
    pub reference_noise: Option<&'a Waveform>,
}

/// Record of one pipeline run: what went in, what came out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: AblationMode,
    pub alpha: f64,
    pub k: usize,
    pub seed: u64,
    pub adapt: AdaptConfig,
    /// SHA-256 of every input, by role.
    pub inputs: BTreeMap<String, String>,
    pub pseudo_noise_sha256: Option<String>,
    pub cohort: Vec<CohortEntry>,
    pub adapted_sha256: String,
    pub checkpoint: Option<PathBuf>,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub adapted: ParamSet,
    pub losses: Vec<f64>,
    pub pseudo_noise: Option<Waveform>,
    pub manifest: RunManifest,
}

/// Hex SHA-256 over the sample rate and the little-endian sample bits.
pub fn waveform_sha256(w: &Waveform) -> String {
    let mut bytes = Vec::with_capacity(4 + 8 * w.len());
    bytes.extend_from_slice(&w.sample_rate().to_le_bytes());
    for s in w.samples() {
        bytes.extend_from_slice(&s.to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// Extract, retrieve, sample and adapt. All inputs are validated before any
/// training starts.
pub fn nastar_pipeline(
    se_init: &ParamSet,
    inputs: &PipelineInputs,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    cfg.adapt.validate()?;
    let mode = cfg.mode;
    let alpha = mode.alpha(cfg.alpha);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let mut hashes = BTreeMap::new();
    hashes.insert("se_init".to_string(), sha256_hex(&se_init.to_bytes()));
    hashes.insert("query".to_string(), waveform_sha256(inputs.query_noisy));

    let missing = |what: &str| Error::InvalidConfig(format!("mode {} needs {what}", mode.name()));
    let retriever = if mode.uses_retrieval() {
        let r = inputs.retriever.ok_or_else(|| missing("an encoder and index"))?;
        if cfg.k == 0 || cfg.k > r.index.len() {
            return Err(Error::KTooLarge {
                k: cfg.k,
                size: r.index.len(),
            });
        }
        let fp = encoder_fingerprint(r.encoder);
        r.index.check_fingerprint(&fp)?;
        hashes.insert("encoder".to_string(), fp);
        hashes.insert("index".to_string(), sha256_hex(&r.index.to_bytes()));
        Some(r)
    } else {
        None
    };
    let reference = if mode.uses_reference_noise() {
        let r = inputs.reference_noise.ok_or_else(|| missing("a reference noise"))?;
        hashes.insert("reference_noise".to_string(), waveform_sha256(r));
        Some(r.clone())
    } else {
        None
    };

    let pseudo = match mode {
        AblationMode::Nastar | AblationMode::Extr | AblationMode::All => {
            let e = inputs.extractor.ok_or_else(|| missing("an extractor"))?;
            hashes.insert("extractor".to_string(), sha256_hex(&e.params.to_bytes()));
            Some(extract_pseudo_noise(e.params, &e.config, inputs.query_noisy)?)
        }
        AblationMode::Gt | AblationMode::Opt => reference,
        AblationMode::Retv => None,
    };

    let (cohort, cohort_ids) = match (mode, retriever) {
        (AblationMode::Nastar | AblationMode::Retv, Some(r)) => {
            let q = retrieval_embed(r.encoder, &r.config, inputs.query_noisy)?;
            let c = top_k(r.index, &q, cfg.k)?;
            let ids = c.ids().map(str::to_string).collect::<Vec<_>>();
            (c.entries, ids)
        }
        (AblationMode::All, _) => (Vec::new(), inputs.pool.ids().map(str::to_string).collect()),
        _ => (Vec::new(), Vec::new()),
    };
    for id in &cohort_ids {
        inputs.pool.get(id)?;
    }

    let sampler = CollaborativeSampler::new(pseudo.clone(), cohort_ids, alpha)?;
    let out = adapt(
        se_init,
        &sampler,
        inputs.pool,
        inputs.speech,
        &cfg.adapt,
        &mut seeded(cfg.seed),
    )?;
    let manifest = RunManifest {
        mode,
        alpha,
        k: if mode.uses_retrieval() { cfg.k } else { 0 },
        seed: cfg.seed,
        adapt: cfg.adapt.clone(),
        inputs: hashes,
        pseudo_noise_sha256: pseudo.as_ref().map(waveform_sha256),
        cohort,
        adapted_sha256: sha256_hex(&out.params.to_bytes()),
        checkpoint: None,
    };
    Ok(PipelineOutput {
        adapted: out.params,
        losses: out.losses,
        pseudo_noise: pseudo,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_encoder_params, init_waveform_params};
    use crate::retrieval::build_index;
    use crate::synthdata::{gen_noise, gen_speech_proxy, NoiseFamily, NoiseFamilySpec};

    struct Fixture {
        query: Waveform,
        truth: Waveform,
        extractor: ParamSet,
        se: ParamSet,
        encoder: ParamSet,
        enc_cfg: EncoderConfig,
        index: EmbeddingIndex,
        pool: NoisePool,
        speech: Vec<Waveform>,
    }

    fn fixture() -> Fixture {
        let mut entries = vec![];
        for (fi, f) in NoiseFamily::ALL.iter().enumerate() {
            for v in 0..3 {
                let w = gen_noise(&NoiseFamilySpec {
                    family: *f,
                    variant_seed: (fi * 10 + v) as u64,
                    duration_s: 1.0,
                    level_dbfs: -26.0,
                })
                .unwrap();
                entries.push((format!("{}_{v}", f.name()), w));
            }
        }
        let enc_cfg = EncoderConfig::small();
        let encoder = init_encoder_params(&enc_cfg, &mut seeded(1)).unwrap();
        let index = build_index(&entries, &encoder, &enc_cfg).unwrap();
        let speech: Vec<_> = (0..2).map(|i| gen_speech_proxy(i, 1.0).unwrap()).collect();
        let m = crate::audio::mix_at_snr(&speech[0], &entries[0].1, 0.0, &mut seeded(2)).unwrap();
        let model = ExtractorConfig::default();
        Fixture {
            query: m.noisy,
            truth: m.noise,
            extractor: init_waveform_params(&model, &mut seeded(3)).unwrap(),
            se: init_waveform_params(&model, &mut seeded(4)).unwrap(),
            encoder,
            enc_cfg,
            index,
            pool: NoisePool::from_entries(entries).unwrap(),
            speech,
        }
    }

    fn inputs(f: &Fixture) -> PipelineInputs<'_> {
        PipelineInputs {
            query_noisy: &f.query,
            extractor: Some(Extractor {
                params: &f.extractor,
                config: ExtractorConfig::default(),
            }),
            retriever: Some(Retriever {
                encoder: &f.encoder,
                config: f.enc_cfg,
                index: &f.index,
            }),
            pool: &f.pool,
            speech: &f.speech,
            reference_noise: Some(&f.truth),
        }
    }

    fn cfg(mode: AblationMode, k: usize, steps: usize) -> PipelineConfig {
        PipelineConfig {
            mode,
            k,
            seed: 5,
            adapt: AdaptConfig {
                steps,
                batch: 1,
                clip_len: 2000,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn mode_alphas() {
        assert_eq!(AblationMode::Extr.alpha(0.9), 0.0);
        assert_eq!(AblationMode::Gt.alpha(0.9), 0.0);
        assert_eq!(AblationMode::Retv.alpha(0.9), 1.0);
        assert_eq!(AblationMode::Nastar.alpha(0.9), 0.9);
        assert_eq!(AblationMode::All.alpha(0.9), 0.9);
        assert_eq!(AblationMode::from_name("RETV"), Some(AblationMode::Retv));
        assert_eq!(AblationMode::from_name("x"), None);
    }

    #[test]
    fn oversized_k_fails_before_training() {
        let f = fixture();
        let r = nastar_pipeline(&f.se, &inputs(&f), &cfg(AblationMode::Nastar, 16, 1));
        assert!(matches!(r, Err(Error::KTooLarge { k: 16, size: 15 })));
    }

    #[test]
    fn stale_index_is_rejected() {
        let f = fixture();
        let other = init_encoder_params(&f.enc_cfg, &mut seeded(99)).unwrap();
        let mut i = inputs(&f);
        i.retriever = Some(Retriever {
            encoder: &other,
            config: f.enc_cfg,
            index: &f.index,
        });
        assert!(matches!(
            nastar_pipeline(&f.se, &i, &cfg(AblationMode::Retv, 4, 0)),
            Err(Error::StaleIndex { .. })
        ));
    }

    #[test]
    fn reruns_are_bitwise_identical_and_manifest_round_trips() {
        let f = fixture();
        let c = cfg(AblationMode::Nastar, 5, 2);
        let a = nastar_pipeline(&f.se, &inputs(&f), &c).unwrap();
        let b = nastar_pipeline(&f.se, &inputs(&f), &c).unwrap();
        assert_eq!(a.adapted.to_bytes(), b.adapted.to_bytes());
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.manifest.cohort.len(), 5);
        assert_ne!(a.adapted, f.se);
        let back = RunManifest::from_json(&a.manifest.to_json().unwrap()).unwrap();
        assert_eq!(back, a.manifest);
        assert_eq!(back.adapted_sha256, sha256_hex(&a.adapted.to_bytes()));
    }

    #[test]
    fn every_mode_runs() {
        let f = fixture();
        for mode in AblationMode::ALL {
            let out = nastar_pipeline(&f.se, &inputs(&f), &cfg(mode, 4, 0)).unwrap();
            assert_eq!(out.adapted, f.se, "{mode:?}");
            let m = &out.manifest;
            assert_eq!(m.cohort.is_empty(), !mode.uses_retrieval());
            match mode {
                AblationMode::Gt | AblationMode::Opt => {
                    assert_eq!(out.pseudo_noise.as_ref(), Some(&f.truth))
                }
                AblationMode::Retv => assert!(out.pseudo_noise.is_none()),
                _ => assert_eq!(out.pseudo_noise.as_ref().unwrap().len(), f.query.len()),
            }
        }
        let mut i = inputs(&f);
        i.reference_noise = None;
        assert!(nastar_pipeline(&f.se, &i, &cfg(AblationMode::Gt, 4, 0)).is_err());
        let mut i = inputs(&f);
        i.retriever = None;
        assert!(nastar_pipeline(&f.se, &i, &cfg(AblationMode::Retv, 4, 0)).is_err());
        assert!(nastar_pipeline(&f.se, &i, &cfg(AblationMode::Extr, 4, 0)).is_ok());
        i.extractor = None;
        assert!(nastar_pipeline(&f.se, &i, &cfg(AblationMode::Extr, 4, 0)).is_err());
        assert!(nastar_pipeline(&f.se, &i, &cfg(AblationMode::Opt, 4, 0)).is_ok());
    }
}
