use thiserror::Error;

/// Broad class of a failure, one per CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Capacity,
    Analysis,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity exceeded: {required} outcomes or profiles exceed the cap of {cap}; {hint}")]
    Capacity {
        required: u128,
        cap: u128,
        hint: &'static str,
    },

    #[error("task {task}: {source}")]
    Task {
        task: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no pure equilibrium on the grid; {0}")]
    NoEquilibrium(String),

    #[error("profile is not an equilibrium: machine {machine} gains {gain:e} by deviating to {deviation:?}")]
    NotAnEquilibrium {
        machine: usize,
        gain: f64,
        deviation: Vec<f64>,
    },

    #[error("simplex did not converge after {iterations} iterations (last pivots: {log})")]
    SolverFailure { iterations: usize, log: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DimensionMismatch { .. }
            | Error::InvalidInput(_)
            | Error::InvalidParams(_)
            | Error::Domain(_) => ErrorKind::Input,
            Error::Capacity { .. } => ErrorKind::Capacity,
            Error::Task { source, .. } => source.kind(),
            Error::NoEquilibrium(_) | Error::NotAnEquilibrium { .. } => ErrorKind::Analysis,
            Error::SolverFailure { .. } => ErrorKind::Internal,
        }
    }

    pub(crate) fn dims(expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
