use thiserror::Error;

/// Errors raised by field arithmetic, sharing, transport and the protocols.
#[derive(Debug, Error)]
pub enum Error {
    #[error("division by zero")]
    DivisionByZero,
    #[error("element has no square root")]
    NonResidue,
    #[error("degree {degree} out of range (allowed {min}..={max})")]
    DegreeOutOfRange { degree: usize, min: usize, max: usize },
    #[error("need {needed} shares, got {got}")]
    TooFewShares { needed: usize, got: usize },
    #[error("shares are not consistent with a polynomial of degree {0}")]
    InconsistentDegree(usize),
    #[error("shares have different degrees ({0} vs {1})")]
    DegreeMismatch(usize, usize),
    #[error("degree {0} would exceed n-1 = {1}")]
    DegreeOverflow(usize, usize),
    #[error("secret position mismatch")]
    PositionMismatch,
    #[error("duplicate share owner {0}")]
    DuplicateOwner(usize),
    #[error("peer {0} disconnected")]
    PeerDisconnected(usize),
    #[error("expected {expected} elements from party {from}, got {got}")]
    CountMismatch { from: usize, expected: usize, got: usize },
    #[error("timed out waiting for party {0}")]
    Timeout(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("missing preprocessed randomness: {0}")]
    MissingRandomness(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("random-bit generation kept hitting zero squares")]
    ZeroSquare,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown functionality `{0}`")]
    UnknownFunctionality(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("layer {0}: {1}")]
    AtLayer(usize, Box<Error>),
}

impl Error {
    /// The underlying error with layer context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLayer(_, e) => e.root(),
            e => e,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
