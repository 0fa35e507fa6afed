use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix did not have the size an operation requires.
    Shape {
        what: String,
        expected: usize,
        actual: usize,
    },
    /// A configuration value is outside its allowed range.
    InvalidConfig(String),
    /// An operation received an empty collection where it needs at least one element.
    Empty(&'static str),
    IdOutOfRange {
        id: usize,
        vocab_size: usize,
    },
    SequenceTooLong {
        len: usize,
        max: usize,
    },
    /// Scoring needs both classes present.
    SingleClass,
    /// Attention was asked to normalize over zero valid positions.
    AllMasked,
    NonFinite(String),
    Divergence {
        epoch: usize,
    },
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Shape {
            what: what.into(),
            expected,
            actual,
        }
    }

    /// True for errors caused by bad input or configuration rather than by
    /// a numerical failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NonFinite(_) | Error::Divergence { .. })
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                what,
                expected,
                actual,
            } => write!(f, "shape mismatch in {what}: expected {expected}, got {actual}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Empty(what) => write!(f, "empty input: {what}"),
            Error::IdOutOfRange { id, vocab_size } => {
                write!(f, "token id {id} out of range for vocabulary of size {vocab_size}")
            }
            Error::SequenceTooLong { len, max } => {
                write!(f, "sequence length {len} exceeds positional table length {max}")
            }
            Error::SingleClass => write!(f, "scores need at least one positive and one negative label"),
            Error::AllMasked => write!(f, "attention mask has no valid positions"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Divergence { epoch } => write!(f, "training diverged (non-finite loss) at epoch {epoch}"),
        }
    }
}

impl core::error::Error for Error {}
