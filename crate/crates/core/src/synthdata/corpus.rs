use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::noise::{gen_noise, NoiseFamily, NoiseFamilySpec};
use super::speech::gen_speech_proxy;
use crate::audio::{save_wav, write_manifest, ManifestEntry, SignalKind, Waveform};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub families: usize,
    pub variants_per_family: usize,
    pub speech_count: usize,
    pub test_speech_count: usize,
    pub noise_duration_s: f64,
    pub speech_min_s: f64,
    pub speech_max_s: f64,
    /// Length of each family's target noise before the half split.
    pub target_duration_s: f64,
    /// Range of per-variant noise levels in dBFS.
    pub level_min_dbfs: f64,
    pub level_max_dbfs: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            families: 5,
            variants_per_family: 40,
            speech_count: 40,
            test_speech_count: 16,
            noise_duration_s: 5.0,
            speech_min_s: 2.0,
            speech_max_s: 4.0,
            target_duration_s: 10.0,
            level_min_dbfs: -32.0,
            level_max_dbfs: -22.0,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families == 0 || self.families > NoiseFamily::ALL.len() {
            return Err(Error::InvalidConfig(format!(
                "families {} outside [1, {}]",
                self.families,
                NoiseFamily::ALL.len()
            )));
        }
        if self.variants_per_family == 0 || self.speech_count == 0 {
            return Err(Error::InvalidConfig(
                "variants_per_family and speech_count must be positive".into(),
            ));
        }
        if !(self.speech_min_s >= 0.5 && self.speech_min_s <= self.speech_max_s) {
            return Err(Error::InvalidConfig("speech duration range invalid".into()));
        }
        if !(self.noise_duration_s > 0.0 && self.target_duration_s > 0.0) {
            return Err(Error::InvalidConfig("durations must be positive".into()));
        }
        if !(self.level_min_dbfs <= self.level_max_dbfs && self.level_max_dbfs <= 0.0) {
            return Err(Error::InvalidConfig("level range invalid".into()));
        }
        Ok(())
    }
}

/// Manifest paths and entries written by [`gen_corpus`].
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub noise_manifest: PathBuf,
    pub speech_manifest: PathBuf,
    pub test_speech_manifest: PathBuf,
    /// Per family: the full target noise and its two halves.
    pub target_manifest: PathBuf,
    pub noise: Vec<ManifestEntry>,
    pub speech: Vec<ManifestEntry>,
    pub test_speech: Vec<ManifestEntry>,
    pub targets: Vec<ManifestEntry>,
}

pub fn target_id(family: NoiseFamily, part: &str) -> String {
    format!("target_{}_{part}", family.name())
}

fn write(
    root: &Path,
    rel: String,
    id: String,
    w: &Waveform,
    kind: SignalKind,
    family: Option<&str>,
) -> Result<ManifestEntry> {
    save_wav(w, root.join(&rel))?;
    Ok(ManifestEntry {
        id,
        path: PathBuf::from(rel),
        kind,
        duration_s: w.duration_s(),
        family: family.map(str::to_string),
    })
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes noise, speech and target WAVs under `out_dir` with JSONL manifests
/// (`noise.jsonl`, `speech.jsonl`, `test_speech.jsonl`, `targets.jsonl`).
/// Manifest paths are relative to `out_dir`.
pub fn gen_corpus(out_dir: impl AsRef<Path>, cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let root = out_dir.as_ref().to_path_buf();
    for sub in ["noise", "speech", "targets"] {
        mkdir(&root.join(sub))?;
    }
    let families = &NoiseFamily::ALL[..cfg.families];

    let mut rng = substream(cfg.seed, 1);
    let mut noise = Vec::new();
    for &f in families {
        for v in 0..cfg.variants_per_family {
            let spec = NoiseFamilySpec {
                family: f,
                variant_seed: rng.gen(),
                duration_s: cfg.noise_duration_s,
                level_dbfs: rng.gen_range(cfg.level_min_dbfs..=cfg.level_max_dbfs),
            };
            let w = gen_noise(&spec)?;
            let id = format!("{}_{v:03}", f.name());
            let rel = format!("noise/{id}.wav");
            noise.push(write(
                &root,
                rel,
                id,
                &w,
                SignalKind::Noise,
                Some(f.name()),
            )?);
        }
    }

    let mut rng = substream(cfg.seed, 2);
    let speech_set = |prefix: &str, count: usize, rng: &mut crate::rng::Rng| {
        (0..count)
            .map(|i| {
                let dur = rng.gen_range(cfg.speech_min_s..=cfg.speech_max_s);
                let w = gen_speech_proxy(rng.gen(), (dur * 100.0).round() / 100.0)?;
                let id = format!("{prefix}_{i:03}");
                write(
                    &root,
                    format!("speech/{id}.wav"),
                    id,
                    &w,
                    SignalKind::Speech,
                    None,
                )
            })
            .collect::<Result<Vec<_>>>()
    };
    let speech = speech_set("train", cfg.speech_count, &mut rng)?;
    let test_speech = speech_set("test", cfg.test_speech_count, &mut rng)?;

    let mut rng = substream(cfg.seed, 3);
    let mut targets = Vec::new();
    for &f in families {
        let spec = NoiseFamilySpec {
            family: f,
            variant_seed: rng.gen(),
            duration_s: cfg.target_duration_s,
            level_dbfs: rng.gen_range(cfg.level_min_dbfs..=cfg.level_max_dbfs),
        };
        let full = gen_noise(&spec)?;
        let half = full.len() / 2;
        let parts = [
            ("full", full.clone()),
            ("first", full.slice(0, half)),
            ("second", full.slice(half, full.len())),
        ];
        for (part, w) in parts {
            let id = target_id(f, part);
            let rel = format!("targets/{}_{part}.wav", f.name());
            targets.push(write(
                &root,
                rel,
                id,
                &w,
                SignalKind::Noise,
                Some(f.name()),
            )?);
        }
    }

    let corpus = Corpus {
        noise_manifest: root.join("noise.jsonl"),
        speech_manifest: root.join("speech.jsonl"),
        test_speech_manifest: root.join("test_speech.jsonl"),
        target_manifest: root.join("targets.jsonl"),
        root,
        noise,
        speech,
        test_speech,
        targets,
    };
    write_manifest(&corpus.noise_manifest, &corpus.noise)?;
    write_manifest(&corpus.speech_manifest, &corpus.speech)?;
    write_manifest(&corpus.test_speech_manifest, &corpus.test_speech)?;
    write_manifest(&corpus.target_manifest, &corpus.targets)?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{load_wav, read_manifest};

    fn small() -> CorpusConfig {
        CorpusConfig {
            families: 5,
            variants_per_family: 3,
            speech_count: 2,
            test_speech_count: 1,
            noise_duration_s: 0.5,
            speech_min_s: 0.5,
            speech_max_s: 0.7,
            target_duration_s: 1.0,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let c = gen_corpus(dir.path(), &small()).unwrap();
        assert_eq!(c.noise.len(), 15);
        assert!(c
            .noise
            .iter()
            .all(|e| e.family.is_some() && e.kind == SignalKind::Noise));
        assert_eq!(read_manifest(&c.noise_manifest).unwrap().len(), 15);
        assert_eq!(read_manifest(&c.speech_manifest).unwrap().len(), 2);
        assert_eq!(c.targets.len(), 15);
    }

    #[test]
    fn halves_concatenate_to_full() {
        let dir = tempfile::tempdir().unwrap();
        let c = gen_corpus(dir.path(), &small()).unwrap();
        for f in NoiseFamily::ALL {
            let load = |part| {
                let e = c
                    .targets
                    .iter()
                    .find(|e| e.id == target_id(f, part))
                    .unwrap();
                load_wav(c.root.join(&e.path)).unwrap()
            };
            let mut joined = load("first").into_samples();
            joined.extend(load("second").into_samples());
            assert_eq!(joined, load("full").into_samples());
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ca = gen_corpus(a.path(), &small()).unwrap();
        let cb = gen_corpus(b.path(), &small()).unwrap();
        assert_eq!(ca.noise, cb.noise);
        for e in ca.noise.iter().chain(&ca.speech).chain(&ca.targets) {
            let x = fs::read(a.path().join(&e.path)).unwrap();
            let y = fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(x, y, "{}", e.id);
        }
        for m in [
            "noise.jsonl",
            "speech.jsonl",
            "test_speech.jsonl",
            "targets.jsonl",
        ] {
            assert_eq!(
                fs::read(a.path().join(m)).unwrap(),
                fs::read(b.path().join(m)).unwrap()
            );
        }
    }
}
