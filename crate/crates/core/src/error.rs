use thiserror::Error;

/// Errors raised while turning a stream line into a [`crate::ingest::Tweet`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("missing coordinate `{0}`")]
    MissingCoordinate(&'static str),
    #[error("coordinate `{field}` out of range: {value}")]
    CoordinateOutOfRange { field: &'static str, value: f64 },
    #[error("record has no keywords after tokenization")]
    EmptyKeywords,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("window must move forward: new end {new_end} <= current end {end}")]
    WindowNotAdvancing { end: u64, new_end: u64 },
    #[error("keyword `{0}` is not in the graph")]
    UnknownKeyword(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty keyword set")]
    EmptyKeywords,
    #[error("no snapshot stored at or before t={0}")]
    NoSnapshot(u64),
    #[error("none of the keywords are known to the embedding model")]
    NoKnownKeywords,
    #[error("no regional history available yet")]
    MissingHistory,
    #[error("training data needs both classes, got {positives} positive / {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("feature vector has length {got}, model expects {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("diff does not match the current window: {0}")]
    InconsistentDiff(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("state file `{file}` has version {found}, expected {expected}")]
    VersionMismatch {
        file: String,
        found: String,
        expected: String,
    },
    #[error("state file `{0}` is corrupt: {1}")]
    Corrupt(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
