use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("symbol index {symbol} out of range for alphabet of size {size}")]
    InvalidSymbol { symbol: usize, size: usize },

    #[error("empty word has no distribution")]
    EmptyWord,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("words have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("chains are defined over different alphabets")]
    AlphabetMismatch,

    #[error("horizon must be at least 1")]
    InvalidHorizon,

    #[error("accuracy must lie strictly between 0 and 1, got {0}")]
    InvalidAccuracy(f64),

    #[error("size guard exceeded: {what} has {size} entries (limit {limit}); use kant_metric instead")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("marginal masses differ by {0:e}")]
    MassMismatch(f64),

    #[error("point {point:?} is not covered: {reason}")]
    Covering { point: Vec<f64>, reason: String },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("exact measure oracle unsupported: {0}")]
    ExactUnsupported(String),

    #[error("row of word {word} sums to {sum} (tolerance {tolerance:e})")]
    NonStochasticRow {
        word: String,
        sum: f64,
        tolerance: f64,
    },

    #[error("refinement iteration {iteration}: {source}")]
    Refinement {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Strips iteration context added by the refinement loop.
    pub fn root(&self) -> &Error {
        match self {
            Error::Refinement { source, .. } => source.root(),
            other => other,
        }
    }
}
