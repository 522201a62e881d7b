use std::fmt;

/// Failure modes surfaced to callers.
///
/// `Internal` covers broken invariants of the algorithm itself (these are
/// bugs, not bad inputs).  `ResourceLimit` is raised when a Groebner basis
/// run or the blowup loop exceeds its configured budget, so callers can
/// distinguish "gave up" from "failed".
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Input rejected before any computation started.
    Input(String),
    /// Polynomial arithmetic on incompatible variable sets.
    VariableMismatch { expected: String, found: String },
    /// A computation budget (degree cap, pair cap, step cap) was exhausted.
    ResourceLimit(String),
    /// The algorithm reached a state its own invariants forbid.
    Internal(String),
    /// A resolution verification check failed on an otherwise finished run.
    Verification(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Input(m) => write!(f, "input error: {m}"),
            Error::VariableMismatch { expected, found } => {
                write!(f, "variable mismatch: expected [{expected}], found [{found}]")
            }
            Error::ResourceLimit(m) => write!(f, "resource limit: {m}"),
            Error::Internal(m) => write!(f, "internal error: {m}"),
            Error::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
