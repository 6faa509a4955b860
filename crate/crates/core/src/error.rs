use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("polytope is empty")]
    EmptyPolytope,

    #[error("Fourier-Motzkin elimination would produce {rows} rows, exceeding the cap of {cap}")]
    RowCap { cap: usize, rows: usize },

    #[error("active-set solver did not terminate within {iterations} iterations")]
    SolverFailure { iterations: usize },

    #[error("singular KKT system for active set {active:?}")]
    Degenerate { active: Vec<usize> },

    #[error("MPC problem infeasible at state {state:?}")]
    InfeasibleState { state: Vec<f64> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("problem hash mismatch: artifact was produced for {found}, expected {expected}")]
    HashMismatch { expected: String, found: String },

    #[error("non-finite loss at epoch {epoch} ({detail}); try a smaller learning rate or gamma")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("initial state has zero norm; excluded from cost normalization")]
    ZeroInitialState,

    #[error("{0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad input files or arguments, as opposed to numerical failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::InvalidArgument(_)
                | Error::Parse(_)
                | Error::HashMismatch { .. }
                | Error::Io(_)
        )
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        // serde_json's message already ends with "at line L column C".
        Error::Parse(e.to_string())
    }
}

/// I/O error annotated with the path it concerns.
pub(crate) fn io_at(path: &std::path::Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}
