use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gimbal lock: |pitch| = {pitch} rad is within 1e-3 of pi/2")]
    GimbalLock { pitch: f64 },
    #[error("mass matrix is not positive definite")]
    SingularMass,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("trajectory diverged at t = {t} s: |nu|_inf = {norm}")]
    Diverged { t: f64, norm: f64 },
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("invalid perturbation for class {label}: {reason}")]
    InvalidPerturbation { label: u32, reason: String },
    #[error("class {label} has {len} samples, at least {min} required")]
    TooFewSamples { label: u32, len: usize, min: usize },
    #[error("window length {window} exceeds segment length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("regression matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },
    #[error("test split for {0} was already evaluated")]
    TestSplitReused(String),
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// Wraps the error with a description of what was being attempted.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Coarse category used for CLI diagnostics and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::GimbalLock { .. }
            | Error::SingularMass
            | Error::NonFinite(_)
            | Error::Diverged { .. } => "dynamics",
            Error::InvalidParams(_) | Error::InvalidPerturbation { .. } | Error::Config(_) => {
                "config"
            }
            Error::TooFewSamples { .. }
            | Error::WindowTooLong { .. }
            | Error::DegenerateData(_)
            | Error::LabelOutOfRange { .. }
            | Error::TestSplitReused(_) => "data",
            Error::ShapeMismatch { .. } | Error::NonFiniteLoss { .. } => "model",
            Error::RankDeficient { .. } => "identification",
            Error::Format { .. } | Error::Io(_) => "io",
            Error::Context { source, .. } => source.category(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "data" => 4,
            "dynamics" => 5,
            "model" => 6,
            "identification" => 7,
            _ => 1,
        }
    }
}
