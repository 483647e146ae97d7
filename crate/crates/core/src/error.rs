use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {what} needs {count}, cap is {cap}")]
    CapacityExceeded {
        what: &'static str,
        count: usize,
        cap: usize,
    },

    /// The moment-space projection did not reach its tolerance. Carries the
    /// last iterate so callers can decide whether it is usable.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("inconsistent table at sigma = {sigma}: lower {lower} from {lower_pair} exceeds upper {upper} from {upper_pair}")]
    InconsistentTable {
        sigma: f64,
        lower: f64,
        upper: f64,
        lower_pair: String,
        upper_pair: String,
    },

    #[error("optimization diverged at iteration {iteration}: loss {loss} vs initial {initial}")]
    OptimizationDiverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("sample split left an empty half after {attempts} attempts")]
    SplitFailure { attempts: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
