use thiserror::Error;

pub type Result<T, E = GbdtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("training set is empty")]
    EmptyDataset,

    #[error("row count mismatch: {rows} feature rows but {labels} labels")]
    LengthMismatch { rows: usize, labels: usize },

    #[error("label at row {row} is {value}; labels must be 0 or 1")]
    InvalidLabel { row: usize, value: f64 },

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("malformed model: {0}")]
    MalformedModel(String),

    #[error("search space is empty or budget is zero")]
    EmptySearch,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
