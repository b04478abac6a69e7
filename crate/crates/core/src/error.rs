use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported audio encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("malformed WAV file: {0}")]
    MalformedWav(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("mixed sample rates: expected {expected} Hz, found {found} Hz in {call}")]
    MixedSampleRates {
        expected: u32,
        found: u32,
        call: String,
    },
    #[error("no onset: signal is silent")]
    NoOnset,
    #[error("degenerate autocorrelation (signal is identically zero)")]
    DegenerateAutocorrelation,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("unstable all-pole model: |reflection coefficient {index}| = {magnitude} >= 1")]
    UnstableModel { index: usize, magnitude: f64 },
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("spectrogram is already log-scaled")]
    AlreadyLog,
    #[error("unvoiced signal: no F0 candidate above the voicing threshold")]
    Unvoiced,
    #[error("harmonic spectrogram has no frames")]
    EmptyHarmonics,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {needed} calls, got {got}")]
    TooFewCalls { needed: usize, got: usize },
    #[error("only one class present; accuracy would be vacuous")]
    SingleClass,
    #[error("non-finite LMNN loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },
    #[error("perplexity {perplexity} is infeasible for point {point}")]
    PerplexityInfeasible { perplexity: f64, point: usize },
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("no results to report")]
    EmptyResults,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable numeric code, used as the CLI exit status.
    pub fn code(&self) -> i32 {
        match self {
            Error::Io { .. } => 10,
            Error::UnsupportedEncoding(_) => 11,
            Error::MalformedWav(_) => 12,
            Error::InvalidSignal(_) => 13,
            Error::MixedSampleRates { .. } => 14,
            Error::NoOnset => 15,
            Error::DegenerateAutocorrelation => 20,
            Error::NonFinite(_) => 21,
            Error::UnstableModel { .. } => 22,
            Error::TooShort { .. } => 23,
            Error::AlreadyLog => 24,
            Error::Unvoiced => 25,
            Error::EmptyHarmonics => 26,
            Error::ShapeMismatch(_) => 30,
            Error::InvalidParameter(_) => 31,
            Error::TooFewCalls { .. } => 32,
            Error::SingleClass => 33,
            Error::NonFiniteLoss { .. } => 34,
            Error::PerplexityInfeasible { .. } => 35,
            Error::Config { .. } => 40,
            Error::EmptyResults => 41,
            Error::Csv(_) => 42,
            Error::Json(_) => 43,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
