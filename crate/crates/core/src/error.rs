//! Error type shared by every module in the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of the codec core.
///
/// Variants carry the numbers needed to report the failure without access to
/// the inputs; messages are stable enough to grep for in CLI output.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had the wrong width.
    DimMismatch { expected: usize, got: usize },
    /// Two waveforms (or a waveform and a config) disagree on sample rate.
    RateMismatch { expected: u32, got: u32 },
    /// A size that must divide evenly does not.
    NotDivisible { value: usize, by: usize },
    /// Fewer samples/items than the operation needs.
    TooFewItems { needed: usize, got: usize },
    /// A token index is outside the codebook.
    IndexOutOfRange { index: u32, k: u32 },
    /// A mel filter has no strictly positive weight (filterbank too dense
    /// for the FFT resolution).
    DegenerateMelFilter { index: usize },
    /// A parameter combination is invalid; the message names the field.
    InvalidConfig(String),
    /// Malformed serialized bytes (bad magic, version, truncation, padding).
    Format(String),
    /// An input value was NaN or infinite where finite math is required.
    NonFinite(&'static str),
    /// A numeric procedure failed (singular matrix, diverged training step).
    Numeric(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::RateMismatch { expected, got } => {
                write!(f, "sample rate mismatch: expected {expected} Hz, got {got} Hz")
            }
            Error::NotDivisible { value, by } => {
                write!(f, "{value} is not divisible by {by}")
            }
            Error::TooFewItems { needed, got } => {
                write!(f, "need at least {needed} items, got {got}")
            }
            Error::IndexOutOfRange { index, k } => {
                write!(f, "token index {index} out of range for codebook of size {k}")
            }
            Error::DegenerateMelFilter { index } => {
                write!(
                    f,
                    "mel filter {index} has no positive weight; reduce band count or raise n_fft"
                )
            }
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
