use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("archive: bad magic {0:?}, expected \"TNSA\"")]
    BadMagic([u8; 4]),

    #[error("archive: unsupported version {0}")]
    UnsupportedVersion(u16),

    #[error("archive: malformed header: {0}")]
    MalformedHeader(String),

    #[error("archive: unknown element kind {0:?}")]
    UnknownKind(String),

    #[error("archive: payload truncated in entry {name:?} (need {needed} bytes, {available} left)")]
    Truncated {
        name: String,
        needed: usize,
        available: usize,
    },

    #[error("archive: duplicate entry name {0:?}")]
    DuplicateName(String),

    #[error("archive: missing entry {0:?}")]
    MissingEntry(String),

    #[error("archive: entry {name:?} has kind {found}, expected {expected}")]
    WrongKind {
        name: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal of {samples} samples is shorter than one frame ({frame_length})")]
    SignalTooShort { samples: usize, frame_length: usize },

    #[error("window/shift pair violates the constant-overlap-add condition: {0}")]
    ColaViolation(String),

    #[error("kappa {kappa} exceeds kappa_max {max}")]
    KappaOutOfRange { kappa: f64, max: f64 },

    #[error("spatial covariance is numerically singular (component {component}, bin {bin})")]
    SingularCovariance { component: usize, bin: usize },

    #[error("non-finite log-likelihood at EM iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("only {achievable} distinct clusters are achievable, {requested} requested")]
    TooFewClusters { achievable: usize, requested: usize },

    #[error("empty reference diarization")]
    EmptyReference,

    #[error("zero-energy reference signal")]
    ZeroReference,

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("wav error: {0}")]
    Wav(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
