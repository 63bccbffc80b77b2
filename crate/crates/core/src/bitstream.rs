//! Token bitstream: fixed 40-byte header, MSB-first packed indices, and a
//! streaming encoder that emits token rows as mel frames arrive.
//!
//! Wire layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MPC1"
//!      4     2  version (1)
//!      6     4  sample_rate
//!     10     2  n_mels
//!     12     2  hop
//!     14     2  win_length
//!     16     2  patch_t
//!     18     2  patch_f
//!     20     4  k
//!     24     8  codebook digest (first 8 bytes of SHA-256 of the codebook file)
//!     32     4  original_t (unpadded frame count)
//!     36     4  reserved, must be zero
//!     40     -  payload: row-major indices, ceil(log2 k) bits each, MSB first
//! ```
//!
//! The payload's final partial byte is zero-padded; decoders reject nonzero
//! padding so truncation and bit corruption fail loudly.

use alloc::format;
use alloc::vec::Vec;

use crate::autoencoder::AutoencoderParams;
use crate::error::{Error, Result};
use crate::patch::PatchGridSpec;
use crate::vq::{self, bits_for_k, Codebook, TokenGrid};

pub const MAGIC: [u8; 4] = *b"MPC1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 40;

/// Everything a decoder needs, minus the codebook itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecHeader {
    pub sample_rate: u32,
    pub n_mels: u16,
    pub hop: u16,
    pub win_length: u16,
    pub patch_t: u16,
    pub patch_f: u16,
    pub k: u32,
    pub codebook_digest: [u8; 8],
    pub original_t: u32,
}

impl CodecHeader {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop == 0 || self.win_length == 0 {
            return Err(Error::Format("header has a zero rate, hop, or window".into()));
        }
        if self.n_mels == 0 || self.patch_t == 0 || self.patch_f == 0 {
            return Err(Error::Format("header has a zero band or patch size".into()));
        }
        if self.n_mels % self.patch_f != 0 {
            return Err(Error::NotDivisible {
                value: self.n_mels as usize,
                by: self.patch_f as usize,
            });
        }
        if self.k == 0 {
            return Err(Error::Format("header codebook size is zero".into()));
        }
        Ok(())
    }

    /// Token grid shape implied by the header.
    pub fn grid_shape(&self) -> (usize, usize) {
        let rows = (self.original_t as usize).div_ceil(self.patch_t as usize);
        (rows, self.n_mels as usize / self.patch_f as usize)
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..10].copy_from_slice(&self.sample_rate.to_le_bytes());
        b[10..12].copy_from_slice(&self.n_mels.to_le_bytes());
        b[12..14].copy_from_slice(&self.hop.to_le_bytes());
        b[14..16].copy_from_slice(&self.win_length.to_le_bytes());
        b[16..18].copy_from_slice(&self.patch_t.to_le_bytes());
        b[18..20].copy_from_slice(&self.patch_f.to_le_bytes());
        b[20..24].copy_from_slice(&self.k.to_le_bytes());
        b[24..32].copy_from_slice(&self.codebook_digest);
        b[32..36].copy_from_slice(&self.original_t.to_le_bytes());
        // bytes 36..40 stay zero (reserved)
        b
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, not a token stream".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported stream version {version}, expected {VERSION}"
            )));
        }
        if bytes[36..40] != [0, 0, 0, 0] {
            return Err(Error::Format("reserved header bytes must be zero".into()));
        }
        let h = CodecHeader {
            sample_rate: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
            n_mels: u16::from_le_bytes([bytes[10], bytes[11]]),
            hop: u16::from_le_bytes([bytes[12], bytes[13]]),
            win_length: u16::from_le_bytes([bytes[14], bytes[15]]),
            patch_t: u16::from_le_bytes([bytes[16], bytes[17]]),
            patch_f: u16::from_le_bytes([bytes[18], bytes[19]]),
            k: u32::from_le_bytes(bytes[20..24].try_into().unwrap()),
            codebook_digest: bytes[24..32].try_into().unwrap(),
            original_t: u32::from_le_bytes(bytes[32..36].try_into().unwrap()),
        };
        h.validate()?;
        Ok(h)
    }
}

/// MSB-first bit packer.
#[derive(Debug, Default)]
pub struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the low `bits` of `value`, most significant bit first.
    pub fn push(&mut self, value: u32, bits: u32) -> Result<()> {
        if bits > 32 {
            return Err(Error::InvalidConfig(format!("cannot pack {bits} bits")));
        }
        if bits < 32 && value >= 1u32 << bits {
            return Err(Error::InvalidConfig(format!("value {value} needs more than {bits} bits")));
        }
        self.acc = (self.acc << bits) | value as u64;
        self.nbits += bits;
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.out.push(((self.acc >> self.nbits) & 0xFF) as u8);
        }
        Ok(())
    }

    /// Zero-pad to a byte boundary and return the buffer.
    pub fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            let byte = ((self.acc << (8 - self.nbits)) & 0xFF) as u8;
            self.out.push(byte);
            self.nbits = 0;
        }
        self.out
    }
}

/// MSB-first bit reader over a byte slice.
#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize, // bit position
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    pub fn read(&mut self, bits: u32) -> Result<u32> {
        if bits > 32 {
            return Err(Error::InvalidConfig(format!("cannot read {bits} bits")));
        }
        if self.pos + bits as usize > self.bytes.len() * 8 {
            return Err(Error::Format("bitstream payload is truncated".into()));
        }
        let mut v: u32 = 0;
        for _ in 0..bits {
            let byte = self.bytes[self.pos / 8];
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | bit as u32;
            self.pos += 1;
        }
        Ok(v)
    }

    /// True if every bit from the cursor to the end is zero.
    pub fn rest_is_zero(&self) -> bool {
        let mut pos = self.pos;
        while pos < self.bytes.len() * 8 {
            if (self.bytes[pos / 8] >> (7 - (pos % 8))) & 1 != 0 {
                return false;
            }
            pos += 1;
        }
        true
    }
}

/// Serialize a token grid behind its header.
pub fn pack(tokens: &TokenGrid, header: &CodecHeader) -> Result<Vec<u8>> {
    header.validate()?;
    let (rows, cols) = header.grid_shape();
    if tokens.rows() != rows || tokens.cols() != cols {
        return Err(Error::Format(format!(
            "token grid {}x{} does not match header shape {rows}x{cols}",
            tokens.rows(),
            tokens.cols()
        )));
    }
    if tokens.original_t() != header.original_t as usize {
        return Err(Error::Format(format!(
            "token grid frame count {} does not match header {}",
            tokens.original_t(),
            header.original_t
        )));
    }
    let bits = bits_for_k(header.k);
    let mut w = BitWriter::new();
    for &idx in tokens.indices() {
        if idx >= header.k {
            return Err(Error::IndexOutOfRange { index: idx, k: header.k });
        }
        w.push(idx, bits)?;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + tokens.indices().len() * bits as usize / 8 + 1);
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&w.finish());
    Ok(out)
}

/// Parse a stream produced by [`pack`]. Rejects truncated or oversized
/// payloads, out-of-range indices, and nonzero padding bits.
pub fn unpack(bytes: &[u8]) -> Result<(CodecHeader, TokenGrid)> {
    let header = CodecHeader::parse(bytes)?;
    let (rows, cols) = header.grid_shape();
    let bits = bits_for_k(header.k);
    let expected_payload = (rows * cols * bits as usize).div_ceil(8);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected_payload {
        return Err(Error::Format(format!(
            "payload is {} bytes, expected {expected_payload}",
            payload.len()
        )));
    }
    let mut r = BitReader::new(payload);
    let mut indices = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let idx = r.read(bits)?;
        if idx >= header.k {
            return Err(Error::IndexOutOfRange { index: idx, k: header.k });
        }
        indices.push(idx);
    }
    if !r.rest_is_zero() {
        return Err(Error::Format("nonzero padding bits at end of payload".into()));
    }
    let grid = TokenGrid::new(rows, cols, header.original_t as usize, indices)?;
    Ok((header, grid))
}

/// Inputs of the bitrate identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitrateSpec {
    pub sample_rate: u32,
    pub hop: u32,
    /// Frames per patch along time (`patch_t`).
    pub downsample_t: u32,
    /// Bands per patch (`patch_f`).
    pub downsample_f: u32,
    pub n_mels: u32,
    pub k: u32,
}

impl Default for BitrateSpec {
    fn default() -> Self {
        BitrateSpec {
            sample_rate: 16_000,
            hop: 128,
            downsample_t: 4,
            downsample_f: 4,
            n_mels: 80,
            k: 4096,
        }
    }
}

/// Exact token bitrate in bits per second:
/// `sample_rate / (hop * downsample_t) * (n_mels / downsample_f) * ceil(log2 k)`.
///
/// At the defaults this is 31.25 rows/s * 20 tokens/row * 12 bits = 7500.
pub fn bitrate_bps(spec: &BitrateSpec) -> Result<f64> {
    if spec.sample_rate == 0
        || spec.hop == 0
        || spec.downsample_t == 0
        || spec.downsample_f == 0
        || spec.n_mels == 0
        || spec.k == 0
    {
        return Err(Error::InvalidConfig("bitrate inputs must all be positive".into()));
    }
    if spec.n_mels % spec.downsample_f != 0 {
        return Err(Error::NotDivisible {
            value: spec.n_mels as usize,
            by: spec.downsample_f as usize,
        });
    }
    let rows_per_sec = spec.sample_rate as f64 / (spec.hop as f64 * spec.downsample_t as f64);
    let tokens_per_row = (spec.n_mels / spec.downsample_f) as f64;
    Ok(rows_per_sec * tokens_per_row * bits_for_k(spec.k) as f64)
}

/// Incremental encoder: feed mel frames, collect token rows.
///
/// Emits one row of `bands / patch_f` tokens for every `patch_t` frames
/// pushed; [`StreamEncoder::flush`] pads a trailing partial block with the
/// spec's pad value. The emitted tokens are bit-identical to running the
/// batch path (patchify, encode, quantize) over the whole spectrogram.
pub struct StreamEncoder<'a> {
    params: &'a AutoencoderParams,
    codebook: &'a Codebook,
    spec: PatchGridSpec,
    bands: usize,
    cols: usize,
    buf: Vec<f64>,
    buffered: usize,
    frames_seen: usize,
    rows_emitted: usize,
}

impl<'a> StreamEncoder<'a> {
    pub fn new(
        params: &'a AutoencoderParams,
        codebook: &'a Codebook,
        spec: PatchGridSpec,
        bands: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if bands == 0 || bands % spec.patch_f != 0 {
            return Err(Error::NotDivisible { value: bands, by: spec.patch_f });
        }
        if params.input_dim() != spec.dim() {
            return Err(Error::DimMismatch { expected: spec.dim(), got: params.input_dim() });
        }
        if codebook.dim() != params.latent() {
            return Err(Error::DimMismatch { expected: params.latent(), got: codebook.dim() });
        }
        Ok(StreamEncoder {
            params,
            codebook,
            spec,
            bands,
            cols: bands / spec.patch_f,
            buf: alloc::vec![0.0; spec.patch_t * bands],
            buffered: 0,
            frames_seen: 0,
            rows_emitted: 0,
        })
    }

    /// Frames pushed so far; becomes `original_t` in the header.
    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn rows_emitted(&self) -> usize {
        self.rows_emitted
    }

    /// Push one mel frame; returns a token row every `patch_t` frames.
    pub fn push_frame(&mut self, frame: &[f64]) -> Result<Option<Vec<u32>>> {
        if frame.len() != self.bands {
            return Err(Error::DimMismatch { expected: self.bands, got: frame.len() });
        }
        let start = self.buffered * self.bands;
        self.buf[start..start + self.bands].copy_from_slice(frame);
        self.buffered += 1;
        self.frames_seen += 1;
        if self.buffered == self.spec.patch_t {
            Ok(Some(self.emit_row()?))
        } else {
            Ok(None)
        }
    }

    /// Flush a trailing partial block (padded with `pad_value`), if any.
    pub fn flush(&mut self) -> Result<Option<Vec<u32>>> {
        if self.buffered == 0 {
            return Ok(None);
        }
        for i in self.buffered * self.bands..self.buf.len() {
            self.buf[i] = self.spec.pad_value;
        }
        self.buffered = self.spec.patch_t;
        Ok(Some(self.emit_row()?))
    }

    fn emit_row(&mut self) -> Result<Vec<u32>> {
        let mut row = Vec::with_capacity(self.cols);
        let mut patch = alloc::vec![0.0; self.spec.dim()];
        for c in 0..self.cols {
            for dt in 0..self.spec.patch_t {
                for df in 0..self.spec.patch_f {
                    patch[dt * self.spec.patch_f + df] =
                        self.buf[dt * self.bands + c * self.spec.patch_f + df];
                }
            }
            let z = self.params.encode_patch(&patch)?;
            let (idx, _) = vq::nearest(self.codebook, &z)?;
            row.push(idx as u32);
        }
        self.buffered = 0;
        self.rows_emitted += 1;
        Ok(row)
    }
}
