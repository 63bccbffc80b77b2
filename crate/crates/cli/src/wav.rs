//! Minimal RIFF/WAVE reader and writer.
//!
//! Reads canonical PCM16 and IEEE float32 files, downmixing multichannel
//! input to mono by averaging. Writes mono PCM16. Unknown chunks are
//! skipped (with the RIFF odd-size pad byte); WAVE_FORMAT_EXTENSIBLE and
//! other compression codes are rejected rather than guessed at.

use std::fs;
use std::path::Path;

use melpatch_core::frontend::Waveform;

use crate::error::{CliError, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn data_err(path: &Path, what: &str) -> CliError {
    CliError::Data(format!("{}: {}", path.display(), what))
}

fn le_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn parse_fmt(path: &Path, body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(data_err(path, "fmt chunk shorter than 16 bytes"));
    }
    let format = le_u16(body, 0);
    let channels = le_u16(body, 2);
    let sample_rate = le_u32(body, 4);
    let bits_per_sample = le_u16(body, 14);
    if format == FORMAT_EXTENSIBLE {
        return Err(data_err(path, "WAVE_FORMAT_EXTENSIBLE is not supported"));
    }
    if format != FORMAT_PCM && format != FORMAT_IEEE_FLOAT {
        return Err(data_err(path, &format!("unsupported format code {format}")));
    }
    if channels == 0 {
        return Err(data_err(path, "zero channels"));
    }
    if sample_rate == 0 {
        return Err(data_err(path, "zero sample rate"));
    }
    Ok(FmtChunk { format, channels, sample_rate, bits_per_sample })
}

fn decode_samples(path: &Path, fmt: &FmtChunk, data: &[u8]) -> Result<Vec<f64>> {
    let bytes_per_sample = match (fmt.format, fmt.bits_per_sample) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (f, b) => {
            return Err(data_err(
                path,
                &format!("unsupported sample layout: format {f}, {b} bits"),
            ))
        }
    };
    let frame_bytes = bytes_per_sample * fmt.channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(data_err(path, "data chunk is not a whole number of frames"));
    }
    let n_frames = data.len() / frame_bytes;
    let mut mono = Vec::with_capacity(n_frames);
    let inv_channels = 1.0 / fmt.channels as f64;
    for frame in 0..n_frames {
        let base = frame * frame_bytes;
        let mut acc = 0.0;
        for ch in 0..fmt.channels as usize {
            let at = base + ch * bytes_per_sample;
            let s = match fmt.format {
                FORMAT_PCM => {
                    i16::from_le_bytes([data[at], data[at + 1]]) as f64 / 32768.0
                }
                _ => f32::from_le_bytes([
                    data[at],
                    data[at + 1],
                    data[at + 2],
                    data[at + 3],
                ]) as f64,
            };
            acc += s;
        }
        let v = acc * inv_channels;
        if !v.is_finite() {
            return Err(data_err(path, "non-finite sample"));
        }
        mono.push(v);
    }
    Ok(mono)
}

/// Read a WAV file into a mono [`Waveform`].
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(data_err(path, "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<FmtChunk> = None;
    let mut samples: Option<Vec<f64>> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start + size;
        if body_end > bytes.len() {
            return Err(data_err(path, "truncated chunk"));
        }
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(path, body)?),
            b"data" => {
                let f = fmt
                    .as_ref()
                    .ok_or_else(|| data_err(path, "data chunk before fmt chunk"))?;
                samples = Some(decode_samples(path, f, body)?);
                break;
            }
            _ => {}
        }
        // chunks are word-aligned; odd sizes carry one pad byte
        pos = body_end + (size & 1);
    }
    let fmt = fmt.ok_or_else(|| data_err(path, "missing fmt chunk"))?;
    let samples = samples.ok_or_else(|| data_err(path, "missing data chunk"))?;
    Waveform::new(samples, fmt.sample_rate).map_err(CliError::from)
}

/// Write a mono PCM16 WAV file. Samples are clamped to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let n = w.len();
    let data_len = n * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in w.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, out)
        .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
    Ok(())
}
