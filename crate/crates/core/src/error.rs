use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {site} out of range 1..={n}")]
    SiteOutOfRange { site: usize, n: usize },

    #[error("register of {0} qubits exceeds the dense limit of 12")]
    TooLarge(usize),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid spectrum: {0}")]
    Spectrum(String),

    #[error("quadrature did not converge ({context}); achieved error estimate {achieved:.3e}")]
    Quadrature { context: String, achieved: f64 },

    #[error("time {t} outside the rate table range [0, {t_max}]")]
    OutOfRange { t: f64, t_max: f64 },

    #[error("no {0} channel in the generator context")]
    MissingChannel(&'static str),

    #[error("integration failed at t = {t}: {msg}")]
    Integration { t: f64, msg: String },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Quadrature { .. }
            | Error::Integration { .. }
            | Error::Fit(_)
            | Error::OutOfRange { .. } => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
