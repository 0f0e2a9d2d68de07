use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed field in a tabular input.
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    /// A record that parsed but violates a domain invariant.
    #[error("row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Quoted products that cannot be satisfied simultaneously.
    #[error("infeasible system: {message} [{}]", products.join(", "))]
    Infeasible {
        message: String,
        products: Vec<String>,
    },

    /// Bootstrapping implied a non-positive bucket value.
    #[error("arbitrage in inputs: implied value {value} for bucket {bucket} is not positive")]
    Arbitrage { bucket: String, value: f64 },

    #[error("month offset {offset} is beyond the curve horizon")]
    OutOfHorizon { offset: usize },

    #[error("insufficient data: need at least {required}, got {actual}")]
    InsufficientData { required: usize, actual: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("constant series")]
    ConstantSeries,

    #[error("forward curve undefined at steps {0:?}")]
    CurveGap(Vec<usize>),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (infeasible systems, degenerate data)
    /// rather than of the inputs' shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Infeasible { .. }
                | Error::Arbitrage { .. }
                | Error::NotSymmetric(_)
                | Error::ConstantSeries
                | Error::InsufficientData { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
