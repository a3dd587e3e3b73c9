use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::index::EmbeddingIndex;
use crate::error::{Error, Result};
use crate::models::Embedding;

pub const DEFAULT_COHORT_SIZE: usize = 250;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub id: String,
    pub similarity: f64,
}

/// The `k` index entries most similar to a query, most similar first.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevantCohort {
    pub entries: Vec<CohortEntry>,
    pub k: usize,
}

impl RelevantCohort {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<CohortEntry> = serde_json::from_str(text)?;
        let cohort = Self {
            k: entries.len(),
            entries,
        };
        cohort.validate()?;
        Ok(cohort)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !(-1.0..=1.0).contains(&e.similarity) {
                return Err(Error::InvalidConfig(format!(
                    "cohort similarity {} outside [-1, 1]",
                    e.similarity
                )));
            }
            if i > 0 && self.entries[i - 1].similarity < e.similarity {
                return Err(Error::InvalidConfig("cohort not sorted".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate cohort id {:?}",
                    e.id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Exact k-nearest entries by cosine similarity; equal similarities are
/// ordered by id.
pub fn top_k(index: &EmbeddingIndex, query: &Embedding, k: usize) -> Result<RelevantCohort> {
    if k == 0 || k > index.len() {
        return Err(Error::KTooLarge {
            k,
            size: index.len(),
        });
    }
    if query.dim() != index.dim() {
        return Err(Error::LengthMismatch(query.dim(), index.dim()));
    }
    let ids = index.ids();
    let q = query.as_slice();
    let mut scored: Vec<(f64, usize)> = (0..index.len())
        .map(|i| {
            let s: f64 = index.row_slice(i).iter().zip(q).map(|(a, b)| a * b).sum();
            (s.clamp(-1.0, 1.0), i)
        })
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1]))
    };
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(RelevantCohort {
        entries: scored
            .into_iter()
            .map(|(s, i)| CohortEntry {
                id: ids[i].clone(),
                similarity: s,
            })
            .collect(),
        k,
    })
}
