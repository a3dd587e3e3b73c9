use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;

use crate::audio::{load_wav, read_manifest, Waveform};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.9;

/// Draws the pseudo-noise with probability `1 - alpha` and each cohort member
/// with probability `alpha / K`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollaborativeSampler {
    pseudo_noise: Option<Waveform>,
    cohort_ids: Vec<String>,
    alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseChoice<'a> {
    Pseudo,
    Cohort(&'a str),
}

impl CollaborativeSampler {
    pub fn new(
        pseudo_noise: Option<Waveform>,
        cohort_ids: Vec<String>,
        alpha: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {alpha} outside [0, 1]"
            )));
        }
        if alpha < 1.0 && pseudo_noise.as_ref().is_none_or(Waveform::is_empty) {
            return Err(Error::InvalidConfig(
                "alpha < 1 needs a non-empty pseudo-noise".into(),
            ));
        }
        if alpha > 0.0 && cohort_ids.is_empty() {
            return Err(Error::InvalidConfig(
                "alpha > 0 needs a non-empty cohort".into(),
            ));
        }
        Ok(Self {
            pseudo_noise,
            cohort_ids,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn pseudo_noise(&self) -> Option<&Waveform> {
        self.pseudo_noise.as_ref()
    }

    pub fn cohort_ids(&self) -> &[String] {
        &self.cohort_ids
    }

    /// Selection probabilities: the pseudo-noise first, then one per cohort id.
    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.cohort_ids.len();
        let mut p = vec![1.0 - self.alpha];
        p.extend(std::iter::repeat_n(
            if k == 0 { 0.0 } else { self.alpha / k as f64 },
            k,
        ));
        p
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseChoice<'_> {
        let u: f64 = rng.gen();
        if u >= self.alpha {
            NoiseChoice::Pseudo
        } else {
            NoiseChoice::Cohort(&self.cohort_ids[rng.gen_range(0..self.cohort_ids.len())])
        }
    }
}

/// Noise waveforms by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoisePool {
    signals: IndexMap<String, Waveform>,
}

impl NoisePool {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Waveform)>) -> Result<Self> {
        let mut signals = IndexMap::new();
        for (id, w) in entries {
            w.ensure_non_empty()?;
            if signals.insert(id.clone(), w).is_some() {
                return Err(Error::Manifest(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self { signals })
    }

    /// Loads the manifest entries, or only those named in `only`.
    pub fn load(manifest: impl AsRef<Path>, only: Option<&[String]>) -> Result<Self> {
        let entries = read_manifest(manifest)?;
        let wanted = |id: &str| only.is_none_or(|ids| ids.iter().any(|w| w == id));
        if let Some(ids) = only {
            for id in ids {
                if !entries.iter().any(|e| &e.id == id) {
                    return Err(Error::Manifest(format!("id {id:?} not in noise manifest")));
                }
            }
        }
        Self::from_entries(
            entries
                .into_iter()
                .filter(|e| wanted(&e.id))
                .map(|e| Ok((e.id, load_wav(&e.path)?)))
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn get(&self, id: &str) -> Result<&Waveform> {
        self.signals
            .get(id)
            .ok_or_else(|| Error::Manifest(format!("no noise signal {id:?}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.signals.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Waveform)> {
        self.signals.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub(crate) fn sample_noise_ref<'a, R: Rng + ?Sized>(
    s: &'a CollaborativeSampler,
    pool: &'a NoisePool,
    rng: &mut R,
) -> Result<&'a Waveform> {
    match s.choose(rng) {
        NoiseChoice::Pseudo => Ok(s.pseudo_noise.as_ref().expect("checked in new")),
        NoiseChoice::Cohort(id) => pool.get(id),
    }
}

/// One noise draw from the sampler.
pub fn sample_noise<R: Rng + ?Sized>(
    s: &CollaborativeSampler,
    pool: &NoisePool,
    rng: &mut R,
) -> Result<Waveform> {
    sample_noise_ref(s, pool, rng).cloned()
}
