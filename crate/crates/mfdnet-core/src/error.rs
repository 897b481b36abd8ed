//! Error type shared by the whole crate.
//!
//! One enum keeps `Result` plumbing uniform across modules; variants carry
//! enough context (axis names, byte offsets, level indices) that a caller can
//! report a failure without re-deriving it.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input tensor has a shape the operation cannot accept
    /// (wrong extent, wrong divisibility, mismatched operands).
    Dimension(String),
    /// A scalar argument is outside its documented range.
    Argument(String),
    /// A configuration value or combination is invalid.
    Config(String),
    /// A structured multi-part input (e.g. a pyramid) is internally
    /// inconsistent; the message names the offending part.
    Structure(String),
    /// Serialized bytes do not parse; `offset` is where decoding failed.
    Format { offset: usize, what: String },
    /// Serialized data has an unsupported format version.
    Version { found: u16, supported: u16 },
    /// Training produced a non-finite loss at `step`.
    NonFinite { step: u64 },
}

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }
    pub fn format(offset: usize, what: impl Into<String>) -> Self {
        Error::Format {
            offset,
            what: what.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Argument(m) => write!(f, "argument error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Structure(m) => write!(f, "structure error: {m}"),
            Error::Format { offset, what } => {
                write!(f, "format error at byte {offset}: {what}")
            }
            Error::Version { found, supported } => {
                write!(f, "unsupported format version {found} (supported: {supported})")
            }
            Error::NonFinite { step } => {
                write!(f, "non-finite loss at step {step}")
            }
        }
    }
}

impl core::error::Error for Error {}
