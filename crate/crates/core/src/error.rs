use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("graph is not connected")]
    Disconnected,

    #[error("vertex {0} out of range")]
    VertexOutOfRange(usize),

    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("matrix row {row} sums to {sum:e}, expected zero")]
    RowSumViolation { row: usize, sum: f64 },

    #[error("point {0:?} lies outside the region")]
    OutsideRegion(Vec<i64>),

    #[error("geometry invariant violated: {0}")]
    Geometry(String),

    #[error("flow support does not match the network: {0}")]
    SupportMismatch(String),

    #[error("enumeration of {requested} trees exceeds the cap of {cap}")]
    EnumerationCap { requested: u128, cap: u128 },

    #[error("regions {0} and {1} have overlapping interiors")]
    OverlappingRegions(usize, usize),

    #[error("path is not valid: {0}")]
    InvalidPath(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        field,
        reason: reason.into(),
    }
}
