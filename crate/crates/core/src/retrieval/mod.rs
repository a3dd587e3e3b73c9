//! Embedding index over the source noise pool and exact cosine top-k search.

mod cohort;
mod index;

pub use cohort::{top_k, CohortEntry, RelevantCohort, DEFAULT_COHORT_SIZE};
pub use index::{
    build_index, build_index_from_manifest, embed_long, encoder_fingerprint, EmbeddingIndex,
    CHUNK_LEN,
};

use crate::error::{Error, Result};
use crate::models::Embedding;

/// Cosine similarity of unit vectors: their dot product clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::LengthMismatch(a.dim(), b.dim()));
    }
    Ok(a.dot(b).clamp(-1.0, 1.0))
}
