use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weight vanishes at {point:?}")]
    DegenerateWeight { point: Vec<f64> },

    #[error("derivative order {order} exceeds available depth {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("point {point:?} lies outside the symbol domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("lower bound violated at {witness:?}: |a| = {value:.6e} < {bound:.6e}")]
    LowerBoundViolation {
        witness: Vec<f64>,
        value: f64,
        bound: f64,
    },

    #[error("point {point:?} is outside the non-stationary region (quotient {quotient:.3e})")]
    OutsideNonStationary { point: Vec<f64>, quotient: f64 },

    #[error("{what} did not converge; residuals {residuals:?}")]
    NonConvergence { what: String, residuals: Vec<f64> },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("spectral route requires DFT-aligned grids")]
    NotDftAligned,

    #[error("mixed Hessian determinant {det:.3e} below floor {floor:.3e}")]
    DegenerateJacobian { det: f64, floor: f64 },

    #[error("frequency {xi:?} outside the grid band (|ξ| ≤ {nyquist:.4})")]
    OutOfBand { xi: Vec<f64>, nyquist: f64 },

    #[error("unsupported kind: {0}")]
    UnsupportedKind(String),

    #[error("operation {op}: {source}")]
    Operation { op: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit status for this error: 2 for configuration problems,
    /// 3 for I/O and serialization failures, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Config { .. }
            | Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::GridMismatch(_)
            | Error::NotDftAligned
            | Error::UnsupportedKind(_) => 2,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            Error::Operation { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
