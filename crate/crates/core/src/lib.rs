//! Streaming mel-spectrogram patch codec.
//!
//! The pipeline is: waveform -> log-mel spectrogram -> 4x4 patch grid ->
//! (optional learned projection) -> single shared codebook -> packed token
//! bitstream. Decoding runs the same chain in reverse and finishes with
//! Griffin-Lim phase reconstruction.
//!
//! Everything in this crate is `no_std` + `alloc`: all arithmetic is `f64`
//! through [`libm`], so results are reproducible across hosts. File and
//! process concerns (paths, WAV, CLI) live in the companion `melpatch` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod autoencoder;
pub mod bitstream;
pub mod checkpoint;
pub mod error;
pub mod fft;
pub mod frontend;
pub mod math;
pub mod metrics;
pub mod patch;
pub mod vq;

pub use error::{Error, Result};
pub use frontend::{FrontendConfig, MelSpectrogram, Waveform};
pub use patch::{PatchGridSpec, PatchSet, VectorGrid};
pub use vq::{Codebook, TokenGrid};
