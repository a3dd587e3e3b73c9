use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed wav: {0}")]
    MalformedWav(String),
    #[error("unsupported channel count: {0}")]
    UnsupportedChannels(u16),
    #[error("unsupported bit depth: {0}")]
    UnsupportedBitDepth(u16),
    #[error("unsupported compression format tag: {0:#06x}")]
    UnsupportedCompression(u16),
    #[error("empty waveform")]
    EmptyWaveform,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("silent signal: {0}")]
    Silent(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("all-zero reference")]
    ZeroReference,
    #[error("input too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("embedding is not unit-norm (norm {0})")]
    NotNormalized(f64),
    #[error("no negatives available for anchor")]
    NoNegatives,
    #[error("k = {k} exceeds index size {size}")]
    KTooLarge { k: usize, size: usize },
    #[error("zero-variance differences")]
    ZeroVariance,
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("report alignment: {0}")]
    Alignment(String),
    #[error("stale index: encoder fingerprint {expected} does not match {found}")]
    StaleIndex { expected: String, found: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }
}
