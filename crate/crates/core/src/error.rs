use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("index {index} out of range for {len} elements")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("record {0} failed validation")]
    InvalidRecord(usize),

    #[error("stage {0} has no committed input")]
    MissingPriorCommitment(String),

    #[error("unknown leaf {0}")]
    UnknownLeaf(String),

    #[error("endorsement refused: {0}")]
    RefusedDishonest(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("deposit {offered} below required {required}")]
    InsufficientDeposit { offered: u64, required: u64 },

    #[error("worker {0} already joined")]
    AlreadyJoined(u32),

    #[error("worker {0} is not active")]
    NotActive(u32),

    #[error("bad signature: {0}")]
    BadSignature(String),

    #[error("no endorsed updates in round {0}")]
    NoEndorsedUpdates(u64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed encoding: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
