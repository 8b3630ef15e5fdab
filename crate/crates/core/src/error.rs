use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument or document field lies outside its domain.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A desk-scale size guard was exceeded.
    #[error("{what}: {size} exceeds the limit of {limit}")]
    Guard {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    /// No scenario reaches the loss threshold, so the conditional law is undefined.
    #[error("threshold {threshold} has zero tail probability ({detail})")]
    ZeroTail { threshold: f64, detail: String },

    /// An accuracy hypothesis the caller is expected to honour does not hold.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// A fixed-point value or difference falls outside the register range.
    #[error("fixed-point overflow: {0}")]
    Overflow(String),

    #[error("map is not a bijection on the label space: {0}")]
    NotBijective(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
