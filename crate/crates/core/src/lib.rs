//! One-shot noise adaptation for speech enhancement.
//!
//! A single noisy utterance from an unseen acoustic condition drives the whole
//! adaptation: a waveform noise extractor estimates the pseudo-noise, a
//! contrastively trained encoder retrieves acoustically similar noises from a
//! source pool, and a collaborative sampler mixes both with clean speech to
//! fine-tune a pretrained enhancement model.

pub mod adapt;
pub mod audio;
pub mod contrastive;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod models;
pub mod retrieval;
pub mod rng;
pub mod synthdata;

pub use audio::Waveform;
pub use error::{Error, Result};
