use thiserror::Error;

/// Errors produced by the fedpca library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at parameter index {index}")]
    NonFinite { index: usize },

    #[error("signal {signal} out of range 1..={levels} at index {index}")]
    SignalOutOfRange {
        signal: u16,
        levels: u16,
        index: usize,
    },

    #[error("length mismatch: expected {expected}, got {actual} ({context})")]
    LengthMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient clients: need at least {needed}, got {actual}")]
    InsufficientClients { needed: usize, actual: usize },

    #[error(
        "insufficient penalty parameters: half {half} of the split has {actual} \
         penalty parameters, need at least {needed}"
    )]
    InsufficientPenaltyPool {
        half: char,
        actual: usize,
        needed: usize,
    },

    #[error("parameter index {index} out of bounds for vector of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("idx parse error in {path}: {reason} at byte offset {offset}")]
    IdxFormat {
        path: String,
        reason: String,
        offset: u64,
    },

    #[error("numeric overflow at round {round}: aggregation produced non-finite values")]
    NumericOverflow { round: u64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    TomlParse(String),

    #[error("serialization error: {0}")]
    Serialize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse category used for process exit codes: config-shaped errors
    /// versus runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::TomlParse(_) | Error::InsufficientClients { .. }
        )
    }
}
