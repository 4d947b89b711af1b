use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad class of a failure, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("model parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("degenerate wavelet level {level}: {reason}")]
    DegenerateLevel { level: usize, reason: String },

    #[error("numerical error in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("{context} did not converge after {iterations} iterations: {detail}")]
    NonConvergence {
        context: String,
        iterations: usize,
        detail: String,
    },

    #[error("model/filter incompatibility: {0}")]
    Incompatible(String),

    #[error("model has {params} parameters but only {scales} scales are available")]
    Identifiability { params: usize, scales: usize },

    #[error("H = A'ΩA is (near-)singular; weakly identified directions: {directions}")]
    RankDeficient { directions: String },

    #[error("parameter {name} (index {index}) is on or outside the boundary of the parameter space")]
    Boundary { index: usize, name: String },

    #[error("saturated model (J = p = {0}), J-test undefined")]
    Saturated(usize),

    #[error("batched-means covariance needs at least 2 blocks, got {0}; use a longer series or a bootstrap method")]
    InsufficientBlocks(usize),

    #[error("robust weights required: the estimate was produced by the standard estimator")]
    RobustWeightsRequired,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::Domain(_)
            | Error::Parse { .. }
            | Error::Incompatible(_)
            | Error::Identifiability { .. }
            | Error::Saturated(_)
            | Error::RobustWeightsRequired
            | Error::Dimension { .. } => ErrorCategory::Config,
            Error::Input(_) | Error::DegenerateLevel { .. } | Error::InsufficientBlocks(_) => {
                ErrorCategory::Data
            }
            Error::Numerical { .. }
            | Error::NonConvergence { .. }
            | Error::RankDeficient { .. }
            | Error::Boundary { .. } => ErrorCategory::Numerical,
        }
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Input(_) => "input",
            Error::Parse { .. } => "parse",
            Error::DegenerateLevel { .. } => "degenerate_level",
            Error::Numerical { .. } => "numerical",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Incompatible(_) => "incompatible",
            Error::Identifiability { .. } => "identifiability",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Boundary { .. } => "boundary",
            Error::Saturated(_) => "saturated",
            Error::InsufficientBlocks(_) => "insufficient_blocks",
            Error::RobustWeightsRequired => "robust_weights_required",
            Error::Dimension { .. } => "dimension",
        }
    }
}
