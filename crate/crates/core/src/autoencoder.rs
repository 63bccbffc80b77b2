//! Per-patch autoencoder, its losses, and the training loop pieces.
//!
//! The encoder/decoder is a small tanh MLP applied independently to every
//! flattened patch. In `identity` mode both maps are the identity and the
//! codebook quantizes raw patches directly; training then only moves the
//! codebook. Backprop is written out by hand because the quantizer needs two
//! different gradient routings:
//!
//! - [`GradMode::StraightThrough`] is the training surrogate: the
//!   reconstruction gradient is copied from the decoder input back onto the
//!   encoder output, skipping the quantizer.
//! - [`GradMode::FrozenAssignments`] is the true gradient of the computed
//!   loss with token assignments held fixed. This is the one a finite
//!   difference can verify, so [`grad_check`] uses it.
//! - [`GradMode::Bypass`] removes the quantizer entirely (decoder reads the
//!   encoder output). With a zero quantization gap it must agree with
//!   straight-through exactly, which pins the surrogate's wiring in tests.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::MelSpectrogram;
use crate::math::{FloatExt, PI};
use crate::patch::{patchify, unpatchify, PatchGridSpec, PatchSet, VectorGrid};
use crate::vq::{self, Codebook, TokenGrid};

/// Encoder/decoder weights. Layouts are row-major `rows x cols` acting as
/// `out = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub(crate) input_dim: usize,
    pub(crate) hidden: usize,
    pub(crate) latent: usize,
    pub(crate) identity: bool,
    pub(crate) enc_w1: Vec<f64>,
    pub(crate) enc_b1: Vec<f64>,
    pub(crate) enc_w2: Vec<f64>,
    pub(crate) enc_b2: Vec<f64>,
    pub(crate) dec_w1: Vec<f64>,
    pub(crate) dec_b1: Vec<f64>,
    pub(crate) dec_w2: Vec<f64>,
    pub(crate) dec_b2: Vec<f64>,
}

impl AutoencoderParams {
    /// Identity maps: latents are the patches themselves.
    pub fn identity(input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be positive".into()));
        }
        Ok(AutoencoderParams {
            input_dim,
            hidden: 0,
            latent: input_dim,
            identity: true,
            enc_w1: Vec::new(),
            enc_b1: Vec::new(),
            enc_w2: Vec::new(),
            enc_b2: Vec::new(),
            dec_w1: Vec::new(),
            dec_b1: Vec::new(),
            dec_w2: Vec::new(),
            dec_b2: Vec::new(),
        })
    }

    /// Xavier-uniform weights, zero biases, seeded.
    pub fn new_random(input_dim: usize, hidden: usize, latent: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || latent == 0 {
            return Err(Error::InvalidConfig("all layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xavier = |rows: usize, cols: usize| -> Vec<f64> {
            let a = (6.0 / (rows + cols) as f64).sqrt_();
            (0..rows * cols).map(|_| rng.gen::<f64>() * 2.0 * a - a).collect()
        };
        Ok(AutoencoderParams {
            input_dim,
            hidden,
            latent,
            identity: false,
            enc_w1: xavier(hidden, input_dim),
            enc_b1: vec![0.0; hidden],
            enc_w2: xavier(latent, hidden),
            enc_b2: vec![0.0; latent],
            dec_w1: xavier(hidden, latent),
            dec_b1: vec![0.0; hidden],
            dec_w2: xavier(input_dim, hidden),
            dec_b2: vec![0.0; input_dim],
        })
    }

    /// Rebuild from raw tensors (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_tensors(
        input_dim: usize,
        hidden: usize,
        latent: usize,
        enc_w1: Vec<f64>,
        enc_b1: Vec<f64>,
        enc_w2: Vec<f64>,
        enc_b2: Vec<f64>,
        dec_w1: Vec<f64>,
        dec_b1: Vec<f64>,
        dec_w2: Vec<f64>,
        dec_b2: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || latent == 0 {
            return Err(Error::InvalidConfig("all layer sizes must be positive".into()));
        }
        let shapes = [
            (enc_w1.len(), hidden * input_dim),
            (enc_b1.len(), hidden),
            (enc_w2.len(), latent * hidden),
            (enc_b2.len(), latent),
            (dec_w1.len(), hidden * latent),
            (dec_b1.len(), hidden),
            (dec_w2.len(), input_dim * hidden),
            (dec_b2.len(), input_dim),
        ];
        for (got, expected) in shapes {
            if got != expected {
                return Err(Error::DimMismatch { expected, got });
            }
        }
        let params = AutoencoderParams {
            input_dim,
            hidden,
            latent,
            identity: false,
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            dec_w1,
            dec_b1,
            dec_w2,
            dec_b2,
        };
        if params.all_tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("autoencoder tensors"));
        }
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    fn all_tensors(&self) -> [&Vec<f64>; 8] {
        [
            &self.enc_w1, &self.enc_b1, &self.enc_w2, &self.enc_b2,
            &self.dec_w1, &self.dec_b1, &self.dec_w2, &self.dec_b2,
        ]
    }

    /// Count of trainable encoder/decoder scalars (0 in identity mode).
    pub fn param_count(&self) -> usize {
        self.all_tensors().iter().map(|t| t.len()).sum()
    }

    /// Map one flattened patch to a latent vector.
    pub fn encode_patch(&self, patch: &[f64]) -> Result<Vec<f64>> {
        if patch.len() != self.input_dim {
            return Err(Error::DimMismatch { expected: self.input_dim, got: patch.len() });
        }
        if self.identity {
            return Ok(patch.to_vec());
        }
        let h1 = affine_tanh(&self.enc_w1, &self.enc_b1, patch);
        Ok(affine(&self.enc_w2, &self.enc_b2, &h1))
    }

    /// Map one latent (codebook entry) back to a patch.
    pub fn decode_latent(&self, latent: &[f64]) -> Result<Vec<f64>> {
        if latent.len() != self.latent {
            return Err(Error::DimMismatch { expected: self.latent, got: latent.len() });
        }
        if self.identity {
            return Ok(latent.to_vec());
        }
        let h2 = affine_tanh(&self.dec_w1, &self.dec_b1, latent);
        Ok(affine(&self.dec_w2, &self.dec_b2, &h2))
    }

    /// Encode every patch of a set into a latent grid.
    pub fn encode_grid(&self, patches: &PatchSet) -> Result<VectorGrid> {
        let g = patches.vectors();
        let mut data = Vec::with_capacity(g.count() * self.latent);
        for v in g.iter_vectors() {
            data.extend_from_slice(&self.encode_patch(v)?);
        }
        VectorGrid::new(g.rows(), g.cols(), self.latent, g.original_t(), data)
    }

    /// Decode every latent of a grid back to patch space.
    pub fn decode_grid(&self, latents: &VectorGrid) -> Result<VectorGrid> {
        let mut data = Vec::with_capacity(latents.count() * self.input_dim);
        for v in latents.iter_vectors() {
            data.extend_from_slice(&self.decode_latent(v)?);
        }
        VectorGrid::new(
            latents.rows(),
            latents.cols(),
            self.input_dim,
            latents.original_t(),
            data,
        )
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let rows = b.len();
    let cols = x.len();
    let mut out = b.to_vec();
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        out[r] += acc;
    }
    out
}

fn affine_tanh(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = affine(w, b, x);
    for v in out.iter_mut() {
        *v = v.tanh_();
    }
    out
}

/// Optimizer hyperparameters and loss weights for a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub commitment_beta: f64,
    /// Utterances per step, consumed by the caller's batching loop.
    pub batch_size: usize,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 3e-4,
            warmup_steps: 1000,
            total_steps: 150_000,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            commitment_beta: 0.25,
            batch_size: 8,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_peak > 0.0) || !self.lr_peak.is_finite() {
            return Err(Error::InvalidConfig("lr_peak must be positive".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::InvalidConfig("warmup_steps exceeds total_steps".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig("total_steps must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(alloc::format!("{name} out of [0,1)")));
            }
        }
        if self.weight_decay < 0.0 || self.commitment_beta < 0.0 {
            return Err(Error::InvalidConfig("negative weight_decay or beta".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::InvalidConfig("adam_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Loss breakdown for one forward pass or training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    /// Mean absolute reconstruction error over unpadded spectrogram cells.
    pub recon_l1: f64,
    /// Mean squared latent/entry distance (moves the codebook).
    pub codebook_loss: f64,
    /// The same distance scaled by `commitment_beta` (moves the encoder).
    pub commitment_loss: f64,
    pub total: f64,
}

/// Linear warmup to `lr_peak`, then cosine decay to zero at `total_steps`.
///
/// `lr(0) = 0` when warmup is enabled, `lr(warmup_steps) = lr_peak` exactly,
/// and every step at or past `total_steps` returns 0.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr_peak * step as f64 / cfg.warmup_steps as f64;
    }
    if step >= cfg.total_steps {
        return 0.0;
    }
    let span = (cfg.total_steps - cfg.warmup_steps) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    cfg.lr_peak * 0.5 * (1.0 + (PI * progress).cos_())
}

/// Mean absolute difference between two spectrograms of equal shape.
pub fn recon_loss(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    a.l1_distance(b)
}

/// Encode, quantize, decode one spectrogram; returns the reconstruction,
/// the tokens, and the loss breakdown.
pub fn forward(
    params: &AutoencoderParams,
    cb: &Codebook,
    m: &MelSpectrogram,
    spec: &PatchGridSpec,
    commitment_beta: f64,
) -> Result<(MelSpectrogram, TokenGrid, LossReport)> {
    check_shapes(params, cb, spec)?;
    let patches = patchify(m, spec)?;
    let z = params.encode_grid(&patches)?;
    let tokens = vq::quantize(cb, &z)?;
    let e = vq::dequantize(cb, &tokens)?;
    let y = params.decode_grid(&e)?;
    let recon = unpatchify(&PatchSet::from_parts(y, *m.config()), spec)?;
    let recon_l1 = recon_loss(m, &recon)?;
    let terms = vq::vq_loss(&z, &e, commitment_beta)?;
    let report = LossReport {
        recon_l1,
        codebook_loss: terms.codebook_term,
        commitment_loss: terms.commitment_term,
        total: recon_l1 + terms.codebook_term + terms.commitment_term,
    };
    Ok((recon, tokens, report))
}

fn check_shapes(params: &AutoencoderParams, cb: &Codebook, spec: &PatchGridSpec) -> Result<()> {
    spec.validate()?;
    if params.input_dim != spec.dim() {
        return Err(Error::DimMismatch { expected: spec.dim(), got: params.input_dim });
    }
    if cb.dim() != params.latent {
        return Err(Error::DimMismatch { expected: params.latent, got: cb.dim() });
    }
    Ok(())
}

/// How the quantizer routes gradients; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    StraightThrough,
    FrozenAssignments,
    Bypass,
}

/// Gradients shaped like [`AutoencoderParams`] plus the codebook.
#[derive(Debug, Clone)]
pub struct Grads {
    pub enc_w1: Vec<f64>,
    pub enc_b1: Vec<f64>,
    pub enc_w2: Vec<f64>,
    pub enc_b2: Vec<f64>,
    pub dec_w1: Vec<f64>,
    pub dec_b1: Vec<f64>,
    pub dec_w2: Vec<f64>,
    pub dec_b2: Vec<f64>,
    pub codebook: Vec<f64>,
}

impl Grads {
    fn zeros(params: &AutoencoderParams, cb: &Codebook) -> Self {
        Grads {
            enc_w1: vec![0.0; params.enc_w1.len()],
            enc_b1: vec![0.0; params.enc_b1.len()],
            enc_w2: vec![0.0; params.enc_w2.len()],
            enc_b2: vec![0.0; params.enc_b2.len()],
            dec_w1: vec![0.0; params.dec_w1.len()],
            dec_b1: vec![0.0; params.dec_b1.len()],
            dec_w2: vec![0.0; params.dec_w2.len()],
            dec_b2: vec![0.0; params.dec_b2.len()],
            codebook: vec![0.0; cb.entries().len()],
        }
    }

    fn is_finite(&self) -> bool {
        [
            &self.enc_w1, &self.enc_b1, &self.enc_w2, &self.enc_b2,
            &self.dec_w1, &self.dec_b1, &self.dec_w2, &self.dec_b2, &self.codebook,
        ]
        .iter()
        .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

struct PatchCache {
    patch: Vec<f64>,
    h1: Vec<f64>,
    z: Vec<f64>,
    entry_index: usize,
    e: Vec<f64>,
    h2: Vec<f64>,
    y: Vec<f64>,
    /// Per-cell visibility: padded frames do not count toward recon loss.
    visible: Vec<bool>,
}

fn forward_patch(
    params: &AutoencoderParams,
    cb: &Codebook,
    patch: &[f64],
    visible: Vec<bool>,
    mode: GradMode,
) -> Result<PatchCache> {
    let (h1, z) = if params.identity {
        (Vec::new(), patch.to_vec())
    } else {
        let h1 = affine_tanh(&params.enc_w1, &params.enc_b1, patch);
        let z = affine(&params.enc_w2, &params.enc_b2, &h1);
        (h1, z)
    };
    let (entry_index, e) = if mode == GradMode::Bypass {
        (usize::MAX, z.clone())
    } else {
        let (idx, _) = vq::nearest(cb, &z)?;
        (idx, cb.entry(idx).to_vec())
    };
    let (h2, y) = if params.identity {
        (Vec::new(), e.clone())
    } else {
        let h2 = affine_tanh(&params.dec_w1, &params.dec_b1, &e);
        let y = affine(&params.dec_w2, &params.dec_b2, &h2);
        (h2, y)
    };
    Ok(PatchCache { patch: patch.to_vec(), h1, z, entry_index, e, h2, y, visible })
}

fn visibility(spec: &PatchGridSpec, row: usize, original_t: usize) -> Vec<bool> {
    let mut v = Vec::with_capacity(spec.dim());
    for dt in 0..spec.patch_t {
        let t = row * spec.patch_t + dt;
        for _ in 0..spec.patch_f {
            v.push(t < original_t);
        }
    }
    v
}

/// Loss and parameter gradients over a batch of spectrograms.
///
/// Reconstruction is normalized by the total number of unpadded cells in the
/// batch; quantization terms by the total number of patches.
pub fn batch_loss_and_grads(
    params: &AutoencoderParams,
    cb: &Codebook,
    batch: &[&MelSpectrogram],
    spec: &PatchGridSpec,
    commitment_beta: f64,
    mode: GradMode,
) -> Result<(LossReport, Grads)> {
    check_shapes(params, cb, spec)?;
    if batch.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let beta = commitment_beta;
    let mut caches: Vec<PatchCache> = Vec::new();
    let mut total_cells = 0usize;
    for m in batch {
        let patches = patchify(m, spec)?;
        let g = patches.vectors();
        total_cells += m.frames() * m.bands();
        for r in 0..g.rows() {
            let vis = visibility(spec, r, g.original_t());
            for c in 0..g.cols() {
                caches.push(forward_patch(params, cb, g.vector(r, c), vis.clone(), mode)?);
            }
        }
    }
    let total_patches = caches.len();
    if total_patches == 0 || total_cells == 0 {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }

    let mut recon_sum = 0.0;
    let mut vq_sum = 0.0;
    let mut grads = Grads::zeros(params, cb);
    let cells_norm = total_cells as f64;
    let patch_norm = total_patches as f64;
    let dim = params.input_dim;

    for cache in &caches {
        for i in 0..dim {
            if cache.visible[i] {
                recon_sum += (cache.y[i] - cache.patch[i]).abs_();
            }
        }
        if mode != GradMode::Bypass {
            let mut d2 = 0.0;
            for (zv, ev) in cache.z.iter().zip(cache.e.iter()) {
                let d = zv - ev;
                d2 += d * d;
            }
            vq_sum += d2;
        }

        // d(recon)/dy, zero on padded cells and exact zeros
        let mut g_y = vec![0.0; dim];
        for i in 0..dim {
            if cache.visible[i] {
                let d = cache.y[i] - cache.patch[i];
                if d != 0.0 {
                    g_y[i] = if d > 0.0 { 1.0 } else { -1.0 } / cells_norm;
                }
            }
        }

        // decoder backprop: g_e_recon = d(recon)/d(decoder input)
        let g_e_recon = if params.identity {
            g_y.clone()
        } else {
            let hidden = params.hidden;
            let mut g_h2 = vec![0.0; hidden];
            for r in 0..dim {
                let g = g_y[r];
                if g == 0.0 {
                    continue;
                }
                grads.dec_b2[r] += g;
                let row = &params.dec_w2[r * hidden..(r + 1) * hidden];
                let grow = &mut grads.dec_w2[r * hidden..(r + 1) * hidden];
                for h in 0..hidden {
                    grow[h] += g * cache.h2[h];
                    g_h2[h] += row[h] * g;
                }
            }
            let latent = params.latent;
            let mut g_e = vec![0.0; latent];
            for h in 0..hidden {
                let ga = g_h2[h] * (1.0 - cache.h2[h] * cache.h2[h]);
                if ga == 0.0 {
                    continue;
                }
                grads.dec_b1[h] += ga;
                let row = &params.dec_w1[h * latent..(h + 1) * latent];
                let grow = &mut grads.dec_w1[h * latent..(h + 1) * latent];
                for l in 0..latent {
                    grow[l] += ga * cache.e[l];
                    g_e[l] += row[l] * ga;
                }
            }
            g_e
        };

        // route around (or through) the quantizer
        let latent = params.latent;
        let mut g_z = vec![0.0; latent];
        match mode {
            GradMode::Bypass => {
                g_z.copy_from_slice(&g_e_recon);
            }
            GradMode::StraightThrough => {
                for l in 0..latent {
                    let gap = cache.z[l] - cache.e[l];
                    g_z[l] = g_e_recon[l] + 2.0 * beta * gap / patch_norm;
                    grads.codebook[cache.entry_index * latent + l] -=
                        2.0 * gap / patch_norm;
                }
            }
            GradMode::FrozenAssignments => {
                for l in 0..latent {
                    let gap = cache.z[l] - cache.e[l];
                    g_z[l] = 2.0 * (1.0 + beta) * gap / patch_norm;
                    grads.codebook[cache.entry_index * latent + l] +=
                        g_e_recon[l] - 2.0 * (1.0 + beta) * gap / patch_norm;
                }
            }
        }

        // encoder backprop
        if !params.identity {
            let hidden = params.hidden;
            let mut g_h1 = vec![0.0; hidden];
            for r in 0..latent {
                let g = g_z[r];
                if g == 0.0 {
                    continue;
                }
                grads.enc_b2[r] += g;
                let row = &params.enc_w2[r * hidden..(r + 1) * hidden];
                let grow = &mut grads.enc_w2[r * hidden..(r + 1) * hidden];
                for h in 0..hidden {
                    grow[h] += g * cache.h1[h];
                    g_h1[h] += row[h] * g;
                }
            }
            for h in 0..hidden {
                let ga = g_h1[h] * (1.0 - cache.h1[h] * cache.h1[h]);
                if ga == 0.0 {
                    continue;
                }
                grads.enc_b1[h] += ga;
                let grow = &mut grads.enc_w1[h * dim..(h + 1) * dim];
                for (gw, pv) in grow.iter_mut().zip(cache.patch.iter()) {
                    *gw += ga * pv;
                }
            }
        }
    }

    let recon_l1 = recon_sum / cells_norm;
    let codebook_loss = if mode == GradMode::Bypass { 0.0 } else { vq_sum / patch_norm };
    let commitment_loss = beta * codebook_loss;
    let report = LossReport {
        recon_l1,
        codebook_loss,
        commitment_loss,
        total: recon_l1 + codebook_loss + commitment_loss,
    };
    Ok((report, grads))
}

/// Forward-only batch loss plus the discrete state (assignments and
/// reconstruction error signs) used by [`grad_check`] to reject probes that
/// cross a discontinuity.
fn batch_loss_probe(
    params: &AutoencoderParams,
    cb: &Codebook,
    batch: &[&MelSpectrogram],
    spec: &PatchGridSpec,
    beta: f64,
) -> Result<(f64, Vec<u32>, Vec<i8>)> {
    let mut total_cells = 0usize;
    let mut recon_sum = 0.0;
    let mut vq_sum = 0.0;
    let mut assignments = Vec::new();
    let mut signs = Vec::new();
    let mut total_patches = 0usize;
    for m in batch {
        let patches = patchify(m, spec)?;
        let g = patches.vectors();
        total_cells += m.frames() * m.bands();
        for r in 0..g.rows() {
            let vis = visibility(spec, r, g.original_t());
            for c in 0..g.cols() {
                let cache =
                    forward_patch(params, cb, g.vector(r, c), vis.clone(), GradMode::FrozenAssignments)?;
                assignments.push(cache.entry_index as u32);
                total_patches += 1;
                for i in 0..params.input_dim {
                    if cache.visible[i] {
                        let d = cache.y[i] - cache.patch[i];
                        recon_sum += d.abs_();
                        signs.push(if d > 0.0 {
                            1
                        } else if d < 0.0 {
                            -1
                        } else {
                            0
                        });
                    }
                }
                let mut d2 = 0.0;
                for (zv, ev) in cache.z.iter().zip(cache.e.iter()) {
                    let d = zv - ev;
                    d2 += d * d;
                }
                vq_sum += d2;
            }
        }
    }
    if total_patches == 0 || total_cells == 0 {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let total = recon_sum / total_cells as f64 + (1.0 + beta) * vq_sum / total_patches as f64;
    Ok((total, assignments, signs))
}

/// Adam first/second moments over all trainable scalars, in the fixed order
/// enc_w1, enc_b1, enc_w2, enc_b2, dec_w1, dec_b1, dec_w2, dec_b2, codebook.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &AutoencoderParams, cb: &Codebook) -> Self {
        let n = params.param_count() + cb.entries().len();
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One AdamW update. Weight decay is decoupled and applies only to
/// encoder/decoder tensors, never to the codebook. With `lr == 0` the
/// moments still advance but no parameter bit changes.
fn adamw_update(
    params: &mut AutoencoderParams,
    cb: &mut Codebook,
    opt: &mut AdamState,
    grads: &Grads,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    let expected = params.param_count() + cb.entries().len();
    if opt.m.len() != expected {
        return Err(Error::DimMismatch { expected, got: opt.m.len() });
    }
    opt.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi_(opt.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi_(opt.t as i32);
    let mut offset = 0usize;
    let mut apply = |theta: &mut [f64], g: &[f64], decay: bool, opt: &mut AdamState| {
        for i in 0..theta.len() {
            let j = offset + i;
            opt.m[j] = cfg.beta1 * opt.m[j] + (1.0 - cfg.beta1) * g[i];
            opt.v[j] = cfg.beta2 * opt.v[j] + (1.0 - cfg.beta2) * g[i] * g[i];
            if lr != 0.0 {
                let m_hat = opt.m[j] / bc1;
                let v_hat = opt.v[j] / bc2;
                let mut update = m_hat / (v_hat.sqrt_() + cfg.adam_eps);
                if decay {
                    update += cfg.weight_decay * theta[i];
                }
                theta[i] -= lr * update;
            }
        }
        offset += theta.len();
    };
    apply(&mut params.enc_w1, &grads.enc_w1, true, opt);
    apply(&mut params.enc_b1, &grads.enc_b1, true, opt);
    apply(&mut params.enc_w2, &grads.enc_w2, true, opt);
    apply(&mut params.enc_b2, &grads.enc_b2, true, opt);
    apply(&mut params.dec_w1, &grads.dec_w1, true, opt);
    apply(&mut params.dec_b1, &grads.dec_b1, true, opt);
    apply(&mut params.dec_w2, &grads.dec_w2, true, opt);
    apply(&mut params.dec_b2, &grads.dec_b2, true, opt);
    let k_entries = cb.entries().len();
    let theta_cb = cb.entries_mut();
    apply(theta_cb, &grads.codebook, false, opt);
    debug_assert_eq!(offset, params.param_count() + k_entries);
    Ok(())
}

/// One straight-through training step at the given step index.
///
/// If the loss or any gradient is non-finite, returns an error *before*
/// touching parameters, codebook, or optimizer state.
pub fn train_step(
    params: &mut AutoencoderParams,
    cb: &mut Codebook,
    opt: &mut AdamState,
    batch: &[&MelSpectrogram],
    spec: &PatchGridSpec,
    cfg: &TrainConfig,
    step: u64,
) -> Result<LossReport> {
    cfg.validate()?;
    let (report, grads) = batch_loss_and_grads(
        params,
        cb,
        batch,
        spec,
        cfg.commitment_beta,
        GradMode::StraightThrough,
    )?;
    if !report.total.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric(alloc::format!(
            "non-finite loss or gradient at step {step}; state left untouched"
        )));
    }
    let lr = lr_schedule(step, cfg);
    adamw_update(params, cb, opt, &grads, lr, cfg)?;
    Ok(report)
}

/// Settings for [`grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Coordinates to probe (sampled without replacement).
    pub probes: usize,
    /// Central-difference step.
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { probes: 64, h: 1e-4, seed: 0 }
    }
}

/// Compare analytic gradients (frozen assignments) against central finite
/// differences on randomly probed coordinates; returns the worst relative
/// error.
///
/// Probes where the +/-h evaluations change any token assignment or flip the
/// sign of any reconstruction residual are skipped: at those points the loss
/// is not differentiable and a finite difference is meaningless. Errors if
/// every probe lands on a discontinuity.
pub fn grad_check(
    params: &mut AutoencoderParams,
    cb: &mut Codebook,
    batch: &[&MelSpectrogram],
    spec: &PatchGridSpec,
    commitment_beta: f64,
    check: &GradCheckConfig,
) -> Result<f64> {
    if !(check.h > 0.0) {
        return Err(Error::InvalidConfig("grad check step must be positive".into()));
    }
    let (_, grads) = batch_loss_and_grads(
        params,
        cb,
        batch,
        spec,
        commitment_beta,
        GradMode::FrozenAssignments,
    )?;
    let (_, base_assign, base_signs) =
        batch_loss_probe(params, cb, batch, spec, commitment_beta)?;

    let n_net = params.param_count();
    let n_total = n_net + cb.entries().len();
    let mut order: Vec<usize> = (0..n_total).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(check.seed);
    // Fisher-Yates, then take the first `probes`
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order.truncate(check.probes.min(n_total).max(1));

    let mut max_rel: f64 = 0.0;
    let mut evaluated = 0usize;
    for &coord in &order {
        let analytic = grad_coord(&grads, params, coord);
        let original = *param_coord(params, cb, coord);
        *param_coord(params, cb, coord) = original + check.h;
        let (f_plus, a_plus, s_plus) =
            batch_loss_probe(params, cb, batch, spec, commitment_beta)?;
        *param_coord(params, cb, coord) = original - check.h;
        let (f_minus, a_minus, s_minus) =
            batch_loss_probe(params, cb, batch, spec, commitment_beta)?;
        *param_coord(params, cb, coord) = original;
        if a_plus != base_assign || a_minus != base_assign {
            continue; // probe crossed a quantization boundary
        }
        if s_plus != base_signs || s_minus != base_signs {
            continue; // probe crossed an |.| kink
        }
        evaluated += 1;
        let fd = (f_plus - f_minus) / (2.0 * check.h);
        let scale = analytic.abs_().max(fd.abs_());
        if scale < 1e-10 {
            continue; // both effectively zero
        }
        let rel = (analytic - fd).abs_() / scale;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    if evaluated == 0 {
        return Err(Error::Numeric(
            "every gradient probe crossed a discontinuity; try a smaller step".into(),
        ));
    }
    Ok(max_rel)
}

/// Flat coordinate accessors matching the AdamState layout.
fn param_coord<'a>(
    params: &'a mut AutoencoderParams,
    cb: &'a mut Codebook,
    mut coord: usize,
) -> &'a mut f64 {
    let tensors: [&mut Vec<f64>; 8] = [
        &mut params.enc_w1, &mut params.enc_b1, &mut params.enc_w2, &mut params.enc_b2,
        &mut params.dec_w1, &mut params.dec_b1, &mut params.dec_w2, &mut params.dec_b2,
    ];
    for t in tensors {
        if coord < t.len() {
            return &mut t[coord];
        }
        coord -= t.len();
    }
    &mut cb.entries_mut()[coord]
}

fn grad_coord(grads: &Grads, params: &AutoencoderParams, mut coord: usize) -> f64 {
    let tensors: [&Vec<f64>; 9] = [
        &grads.enc_w1, &grads.enc_b1, &grads.enc_w2, &grads.enc_b2,
        &grads.dec_w1, &grads.dec_b1, &grads.dec_w2, &grads.dec_b2, &grads.codebook,
    ];
    debug_assert_eq!(params.param_count() + grads.codebook.len(), tensors.iter().map(|t| t.len()).sum());
    for t in tensors {
        if coord < t.len() {
            return t[coord];
        }
        coord -= t.len();
    }
    unreachable!("coordinate out of range")
}
