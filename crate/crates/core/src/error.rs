use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a Gaussian state needs at least one mode")]
    ZeroModes,
    #[error("mode index {mode} out of range for a {n_modes}-mode state")]
    InvalidMode { mode: usize, n_modes: usize },
    #[error("mode {0} used twice where distinct modes are required")]
    DuplicateMode(usize),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("{name} = {value} is outside the allowed range {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("covariance matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("covariance violates the uncertainty principle (min eigenvalue of cov + iΩ is {0:e})")]
    Unphysical(f64),
    #[error("quadratures on mode {0} do not commute with each other")]
    NonCommuting(usize),
    #[error("record is empty")]
    EmptyRecord,
    #[error("need at least {needed} slots with setting {setting}, found {found}")]
    InsufficientSlots {
        setting: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("every bin holds fewer than {min_count} samples")]
    AllBinsUnderpopulated { min_count: usize },
    #[error("message value {value} is not on the grid (spacing {spacing})")]
    OffGrid { value: f64, spacing: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("state carries no eavesdropper modes")]
    NoEveModes,
    #[error("invalid mode assignment: {0}")]
    InvalidModeAssignment(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("session failed: {0}")]
    SessionFailed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_finite(value: f64, name: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(name))
    }
}
