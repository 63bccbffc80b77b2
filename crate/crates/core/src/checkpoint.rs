//! Codebook checkpoint serialization.
//!
//! Layout (integers little-endian, floats f32):
//!
//! ```text
//! offset  size       field
//!      0     4       magic "MPCB"
//!      4     1       version (1)
//!      5     4       k
//!      9     2       dim
//!     11  k*dim*4    entries, row-major
//!      .     1       flag: 0 = codebook only, 1 = projection block follows
//! ```
//!
//! The projection block stores `input_dim`, `hidden`, `latent` (u16 each)
//! and then eight tensors in the order enc_w1, enc_b1, enc_w2, enc_b2,
//! dec_w1, dec_b1, dec_w2, dec_b2, each as `rows: u32, cols: u32` followed
//! by row-major f32 data (biases are `rows x 1`).
//!
//! Entries travel as f32, so parsing is lossy relative to the f64 training
//! state. Encoders must quantize against the *parsed* codebook, never the
//! in-memory one, or a later load would assign different tokens.

use alloc::format;
use alloc::vec::Vec;
use sha2::{Digest, Sha256};

use crate::autoencoder::AutoencoderParams;
use crate::error::{Error, Result};
use crate::vq::Codebook;

pub const MAGIC: [u8; 4] = *b"MPCB";
pub const VERSION: u8 = 1;

/// First 8 bytes of SHA-256 over the serialized checkpoint; embedded in
/// every token stream header so decode can refuse a mismatched codebook.
pub fn digest8(bytes: &[u8]) -> [u8; 8] {
    let d = Sha256::digest(bytes);
    d[..8].try_into().unwrap()
}

/// Serialize a codebook, optionally with its projection network.
///
/// Identity-mode projections carry no tensors; pass `None` for them.
pub fn serialize_checkpoint(
    cb: &Codebook,
    projection: Option<&AutoencoderParams>,
) -> Result<Vec<u8>> {
    if cb.k() > u32::MAX as usize {
        return Err(Error::InvalidConfig("codebook too large for the file format".into()));
    }
    if cb.dim() > u16::MAX as usize {
        return Err(Error::InvalidConfig("codebook dim too large for the file format".into()));
    }
    if let Some(p) = projection {
        if p.is_identity() {
            return Err(Error::InvalidConfig(
                "identity projection must be stored as flag 0 (pass None)".into(),
            ));
        }
        if p.latent() != cb.dim() {
            return Err(Error::DimMismatch { expected: cb.dim(), got: p.latent() });
        }
    }
    let mut out = Vec::with_capacity(16 + cb.entries().len() * 4);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(cb.k() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u16).to_le_bytes());
    for &v in cb.entries() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    match projection {
        None => out.push(0),
        Some(p) => {
            out.push(1);
            for dim in [p.input_dim(), p.hidden(), p.latent()] {
                if dim > u16::MAX as usize {
                    return Err(Error::InvalidConfig("projection layer too wide".into()));
                }
                out.extend_from_slice(&(dim as u16).to_le_bytes());
            }
            let tensors: [(&[f64], usize, usize); 8] = [
                (&p.enc_w1, p.hidden(), p.input_dim()),
                (&p.enc_b1, p.hidden(), 1),
                (&p.enc_w2, p.latent(), p.hidden()),
                (&p.enc_b2, p.latent(), 1),
                (&p.dec_w1, p.hidden(), p.latent()),
                (&p.dec_b1, p.hidden(), 1),
                (&p.dec_w2, p.input_dim(), p.hidden()),
                (&p.dec_b2, p.input_dim(), 1),
            ];
            for (data, rows, cols) in tensors {
                out.extend_from_slice(&(rows as u32).to_le_bytes());
                out.extend_from_slice(&(cols as u32).to_le_bytes());
                for &v in data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 4)?;
        let mut out = Vec::with_capacity(count);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite("checkpoint tensor"));
            }
            out.push(v as f64);
        }
        Ok(out)
    }
}

/// Parse a checkpoint produced by [`serialize_checkpoint`].
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Codebook, Option<AutoencoderParams>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a codebook file".into()));
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported codebook version {version}, expected {VERSION}"
        )));
    }
    let k = c.u32()? as usize;
    let dim = c.u16()? as usize;
    if k == 0 || dim == 0 {
        return Err(Error::Format("codebook with zero k or dim".into()));
    }
    let entries = c.f32_vec(k * dim)?;
    let cb = Codebook::from_flat(entries, k, dim)?;
    let flag = c.u8()?;
    let projection = match flag {
        0 => None,
        1 => {
            let input_dim = c.u16()? as usize;
            let hidden = c.u16()? as usize;
            let latent = c.u16()? as usize;
            if latent != dim {
                return Err(Error::DimMismatch { expected: dim, got: latent });
            }
            let expected_shapes = [
                (hidden, input_dim),
                (hidden, 1),
                (latent, hidden),
                (latent, 1),
                (hidden, latent),
                (hidden, 1),
                (input_dim, hidden),
                (input_dim, 1),
            ];
            let mut tensors: Vec<Vec<f64>> = Vec::with_capacity(8);
            for (i, (er, ec)) in expected_shapes.iter().enumerate() {
                let rows = c.u32()? as usize;
                let cols = c.u32()? as usize;
                if rows != *er || cols != *ec {
                    return Err(Error::Format(format!(
                        "projection tensor {i} has shape {rows}x{cols}, expected {er}x{ec}"
                    )));
                }
                tensors.push(c.f32_vec(rows * cols)?);
            }
            let mut it = tensors.into_iter();
            Some(AutoencoderParams::from_tensors(
                input_dim,
                hidden,
                latent,
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
                it.next().unwrap(),
            )?)
        }
        other => {
            return Err(Error::Format(format!("unknown projection flag {other}")));
        }
    };
    if c.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - c.pos
        )));
    }
    Ok((cb, projection))
}
