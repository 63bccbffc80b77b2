//! Tiling of a mel spectrogram into fixed-size patches and back.
//!
//! The band axis must divide evenly; the time axis is padded *after* the
//! signal with `pad_value` (the log floor, so padding looks like silence).
//! Each patch is flattened frame-major: element `dt * patch_f + df` holds
//! frame `dt`, band `df` of the patch. Both the tiling and this order are
//! wire-format commitments; the bitstream stores patches row-major by
//! (row, col).

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frontend::{FrontendConfig, MelSpectrogram};
use crate::math::FloatExt;

/// Patch geometry plus the value used to pad trailing frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGridSpec {
    pub patch_t: usize,
    pub patch_f: usize,
    pub pad_value: f64,
}

impl Default for PatchGridSpec {
    fn default() -> Self {
        PatchGridSpec { patch_t: 4, patch_f: 4, pad_value: 1e-5f64.ln_() }
    }
}

impl PatchGridSpec {
    /// Spec with the pad value matched to a frontend's log floor.
    pub fn for_config(cfg: &FrontendConfig) -> Self {
        PatchGridSpec { pad_value: cfg.log_floor.ln_(), ..Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.patch_t * self.patch_f
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_t == 0 || self.patch_f == 0 {
            return Err(Error::InvalidConfig("patch sizes must be positive".into()));
        }
        if !self.pad_value.is_finite() {
            return Err(Error::NonFinite("pad_value"));
        }
        Ok(())
    }
}

/// Rectangular grid of equal-length vectors, row-major.
///
/// Used for flattened patches and for encoder latents; `original_t` carries
/// the unpadded frame count through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    original_t: usize,
    data: Vec<f64>,
}

impl VectorGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        dim: usize,
        original_t: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::DimMismatch { expected: rows * cols * dim, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector grid"));
        }
        Ok(VectorGrid { rows, cols, dim, original_t, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn original_t(&self) -> usize {
        self.original_t
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn vector(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// All vectors concatenated row-major.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Vectors in row-major order.
    pub fn iter_vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Patchified spectrogram: the vectors plus the frontend config needed to
/// rebuild a [`MelSpectrogram`] on the way back.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    vectors: VectorGrid,
    config: FrontendConfig,
}

impl PatchSet {
    pub fn from_parts(vectors: VectorGrid, config: FrontendConfig) -> Self {
        PatchSet { vectors, config }
    }

    pub fn vectors(&self) -> &VectorGrid {
        &self.vectors
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn original_t(&self) -> usize {
        self.vectors.original_t
    }
}

/// Grid shape for a `t_frames x f_bands` spectrogram: rows cover time with
/// padding, columns require the band axis to divide evenly.
pub fn grid_dims(t_frames: usize, f_bands: usize, spec: &PatchGridSpec) -> Result<(usize, usize)> {
    spec.validate()?;
    if f_bands % spec.patch_f != 0 {
        return Err(Error::NotDivisible { value: f_bands, by: spec.patch_f });
    }
    let rows = t_frames.div_ceil(spec.patch_t);
    Ok((rows, f_bands / spec.patch_f))
}

/// Cut a spectrogram into flattened patches.
pub fn patchify(m: &MelSpectrogram, spec: &PatchGridSpec) -> Result<PatchSet> {
    let (rows, cols) = grid_dims(m.frames(), m.bands(), spec)?;
    let dim = spec.dim();
    let mut data = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            for dt in 0..spec.patch_t {
                let t = r * spec.patch_t + dt;
                for df in 0..spec.patch_f {
                    data.push(if t < m.frames() {
                        m.value(t, c * spec.patch_f + df)
                    } else {
                        spec.pad_value
                    });
                }
            }
        }
    }
    let vectors = VectorGrid::new(rows, cols, dim, m.frames(), data)?;
    Ok(PatchSet::from_parts(vectors, *m.config()))
}

/// Reassemble a spectrogram, dropping the padded frames.
pub fn unpatchify(p: &PatchSet, spec: &PatchGridSpec) -> Result<MelSpectrogram> {
    spec.validate()?;
    let g = p.vectors();
    if g.dim() != spec.dim() {
        return Err(Error::DimMismatch { expected: spec.dim(), got: g.dim() });
    }
    let expected_rows = g.original_t().div_ceil(spec.patch_t);
    if g.rows() != expected_rows {
        return Err(Error::InvalidConfig(alloc::format!(
            "grid of {} rows cannot hold {} frames with patch_t {}",
            g.rows(),
            g.original_t(),
            spec.patch_t
        )));
    }
    let frames = g.original_t();
    let bands = g.cols() * spec.patch_f;
    let mut values = alloc::vec![0.0; frames * bands];
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            let v = g.vector(r, c);
            for dt in 0..spec.patch_t {
                let t = r * spec.patch_t + dt;
                if t >= frames {
                    continue;
                }
                for df in 0..spec.patch_f {
                    values[t * bands + c * spec.patch_f + df] = v[dt * spec.patch_f + df];
                }
            }
        }
    }
    MelSpectrogram::from_values(values, frames, bands, *p.config())
}
