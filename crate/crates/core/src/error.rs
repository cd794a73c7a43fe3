use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: non-finite entry in input")]
    NonFinite { op: &'static str },
    #[error("eigenvalue {re:e}{im:+e}i lies on the branch cut of the principal logarithm")]
    BranchCut { re: f64, im: f64 },
    #[error("{op}: rank {rank} below the required {required}")]
    RankDeficient {
        op: &'static str,
        rank: usize,
        required: usize,
    },
    #[error("{op}: singular matrix")]
    Singular { op: &'static str },
    #[error("{op}: membership in {set} fails (residual {residual:e})")]
    Membership {
        op: &'static str,
        set: &'static str,
        residual: f64,
    },
    #[error("relation product has dimension {found}, expected {expected}")]
    DegenerateRelation { expected: usize, found: usize },
    #[error("{op}: invalid parameter {name}: {reason}")]
    InvalidParameter {
        op: &'static str,
        name: &'static str,
        reason: String,
    },
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("{op}: truncation bound {bound:e} exceeds {limit:e}")]
    Truncation {
        op: &'static str,
        bound: f64,
        limit: f64,
    },
    #[error("cutoff not converged: changing D by 2 moves the value by {delta:e}")]
    CutoffNotConverged { delta: f64 },
    #[error("determinant vanishes along the homotopy at strength {strength}")]
    Caustic { strength: f64 },
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
