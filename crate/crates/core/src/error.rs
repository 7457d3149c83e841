use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate size: {0}")]
    DegenerateSize(String),

    #[error("design has no spatial-coupling layout")]
    MissingLayout,

    #[error("instance too large for exhaustive enumeration ({candidates} candidates, limit {limit})")]
    TooLarge { candidates: u128, limit: u128 },

    #[error("no consistent vector of weight at most {max_weight}")]
    NoConsistentVector { max_weight: usize },

    #[error("weights infeasible at j={j}: (1-2ζ)2^(j/s-1) = {lhs} < 2^(j/s)-1 = {rhs}")]
    Infeasible { j: usize, lhs: f64, rhs: f64 },

    #[error("oracle inconsistency: {0}")]
    OracleInconsistent(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, found })
    }
}
