//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("mode size {size} not divisible by {divisor} (mode {mode}, level shift {shift})")]
    NonDivisible {
        size: usize,
        divisor: usize,
        mode: usize,
        shift: usize,
    },

    #[error("output would hold {requested} elements, above the element limit {limit}")]
    ElementLimit { requested: u128, limit: usize },

    #[error("mode index {mode} out of range 1..={order}")]
    BadModeIndex { mode: usize, order: usize },

    #[error("vector length {len} does not match mode size {expected}")]
    LengthMismatch { len: usize, expected: usize },

    #[error("batch size {0} must be at least 2")]
    BadBatchSize(usize),

    #[error("rank vector has {got} entries, expected {expected}")]
    RankVectorLength { got: usize, expected: usize },

    #[error("invalid rank budget: {0}")]
    InvalidRanks(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("base format mismatch: {0}")]
    FormatMismatch(String),

    #[error("operation not supported for {format} base format: {op}")]
    UnsupportedBase { format: &'static str, op: &'static str },

    #[error("invalid level index {level}, levels run 0..={max}")]
    BadLevel { level: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scale parameters must be strictly increasing")]
    NonIncreasingScales,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("declared ranks do not match payload extents: {0}")]
    RankExtentMismatch(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported PGM maxval {0}")]
    UnsupportedMaxval(u32),
}
