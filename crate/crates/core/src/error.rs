use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{field} = {value} is outside its allowed range")]
    OutOfRange { field: &'static str, value: f64 },

    #[error("brightness fraction p = {0} must lie strictly inside (0, 1)")]
    Degenerate(f64),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("mode order {0} is negative")]
    NegativeOrder(i64),

    #[error("position {x} is outside the response window [{lo}, {hi}]")]
    OutOfWindow { x: f64, lo: f64, hi: f64 },

    #[error("{points} scan points cannot support a degree-{degree} fit (need at least {needed})")]
    InsufficientPoints {
        points: usize,
        degree: usize,
        needed: usize,
    },

    #[error("normal system condition estimate {0:.3e} exceeds the limit")]
    IllConditioned(f64),

    #[error("scan does not cover the required support: {0}")]
    InsufficientSupport(String),

    #[error("response curves for source {0} are missing")]
    MissingSource(u8),

    #[error("{bins} bins are too few to estimate a {modes}-mode covariance")]
    TooFewBins { bins: usize, modes: usize },

    #[error("covariance matrix is not positive definite")]
    SingularCovariance,

    #[error("no start of the optimizer converged")]
    NoConvergence,

    #[error("only {0} converged estimates; at least 2 are required")]
    TooFewConverged(usize),

    #[error("scene carries no information: every Jacobian entry vanishes")]
    DegenerateScene,

    #[error("time series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("both calibration series sit at the same position {0}")]
    SamePosition(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::IllConditioned(_)
                | Error::SingularCovariance
                | Error::NoConvergence
                | Error::TooFewConverged(_)
                | Error::DegenerateScene
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
