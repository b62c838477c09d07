use thiserror::Error;

/// Errors raised by tomoplan.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: need N >= 2")]
    InvalidDimension(usize),

    #[error("matrix is {rows}x{cols}, expected {expected}x{expected}")]
    Shape {
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("length mismatch: got {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },

    #[error("matrix is not Hermitian (asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("trace is {0}, expected 1")]
    InvalidTrace(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),

    #[error("invalid experiment setup: {0}")]
    InvalidSetup(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error(
        "outcome {outcome} of configuration '{config}' has probability {probability:e} \
         but the configuration carries positive weight"
    )]
    SingularStatistics {
        config: String,
        outcome: usize,
        probability: f64,
    },

    #[error("Fisher information is singular")]
    SingularFisher,

    #[error("setup is not minimal: {independent} independent outcomes for {parameters} parameters")]
    NotMinimal {
        independent: usize,
        parameters: usize,
    },

    #[error("reduced measurement matrix is rank deficient (condition {0:e})")]
    RankDeficient(f64),

    #[error("degenerate design: configuration {config} has block sum {value:e}")]
    DegenerateDesign { config: usize, value: f64 },

    #[error("configuration '{config}' has {outcomes} outcomes; binary measurements required")]
    NotBinary { config: String, outcomes: usize },

    #[error("radius {value} outside [{min}, {max}]")]
    RadiusOutOfRange { value: f64, min: f64, max: f64 },

    #[error("average of 1/p diverges for outcome {outcome} of configuration '{config}'")]
    DivergentAverage { config: String, outcome: usize },

    #[error("optimizer did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("state is not physical: {0}")]
    Unphysical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (singularities, non-convergence)
    /// rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularStatistics { .. }
                | Error::SingularFisher
                | Error::RankDeficient(_)
                | Error::DegenerateDesign { .. }
                | Error::DivergentAverage { .. }
                | Error::NoConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
