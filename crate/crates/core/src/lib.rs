//! Diffusion posterior sampling for 1-D audio inverse problems.
//!
//! The crate is organized around a discrete variance-preserving diffusion
//! process (DDPM). A score model trained once, unconditionally, on waveforms
//! is reused at sampling time for several restoration tasks by modifying the
//! score in the reverse loop:
//!
//! * bandwidth extension: imputation guidance (the observed low band of the
//!   denoised estimate is overwritten with the observation),
//! * declipping and mel inversion (vocoding): reconstruction guidance (the
//!   gradient of a data-fit residual evaluated at the denoised estimate),
//! * two-source separation: an analytic Gaussian likelihood on the mixture.
//!
//! Analytic Gaussian priors with closed-form scores and posteriors are
//! included so every sampler and guidance rule can be checked against exact
//! oracles instead of eyeballed audio.

pub mod config;
pub mod data;
pub mod guidance;
pub mod metrics;
pub mod operators;
pub mod schedule;
pub mod score;
pub mod signal;

pub mod commands;

use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit codes:
/// `Config` → 2, `Io`/`Format` → 3, `Numeric` → 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Format(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// A sampled mono signal. Samples are kept as `f64` internally; WAV I/O
/// converts from/to 16-bit PCM at the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Self {
        Waveform {
            sample_rate,
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}
