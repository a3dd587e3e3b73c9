//! Deterministic synthetic noise families, speech proxies and corpora.

mod corpus;
mod noise;
mod speech;

pub use corpus::{gen_corpus, target_id, Corpus, CorpusConfig};
pub use noise::{gen_noise, NoiseFamily, NoiseFamilySpec, HUM_F0};
pub use speech::gen_speech_proxy;
