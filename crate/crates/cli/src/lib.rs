//! File-format and command plumbing for the mel-patch codec.
//!
//! The DSP, quantizer, training, and metric mathematics live in
//! `melpatch-core`; this crate adds WAV and config parsing, the synthetic
//! corpus generator, and the encode/decode/train/eval pipelines the
//! `melpatch` binary exposes.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod synth;
pub mod wav;

pub use config::CliConfig;
pub use error::{CliError, Result};
