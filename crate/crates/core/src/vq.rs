//! Single shared codebook and everything that touches it: nearest-neighbor
//! assignment, k-means training, EMA refinement, and usage statistics.
//!
//! Ties in nearest-neighbor search always resolve to the lowest index
//! (strict `<` on squared distance), so assignments are deterministic and
//! reproducible across runs.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::FloatExt;
use crate::patch::VectorGrid;

/// `k` embedding vectors of width `dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Vec<f64>,
    k: usize,
    dim: usize,
}

impl Codebook {
    pub fn from_flat(entries: Vec<f64>, k: usize, dim: usize) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::InvalidConfig("codebook k and dim must be positive".into()));
        }
        if k > u32::MAX as usize {
            return Err(Error::InvalidConfig("codebook size exceeds u32 range".into()));
        }
        if entries.len() != k * dim {
            return Err(Error::DimMismatch { expected: k * dim, got: entries.len() });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook entries"));
        }
        Ok(Codebook { entries, k, dim })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, index: usize) -> &[f64] {
        &self.entries[index * self.dim..(index + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Mutable entry storage for the optimizer and gradient checker.
    pub(crate) fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    /// Bits needed per token: `ceil(log2 k)`; 0 for a single-entry book.
    pub fn bits_per_index(&self) -> u32 {
        bits_for_k(self.k as u32)
    }
}

/// `ceil(log2 k)` as used by the packer; `k = 1` needs no bits at all.
pub fn bits_for_k(k: u32) -> u32 {
    32 - (k - 1).leading_zeros()
}

/// Token indices arranged like the patch grid they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    rows: usize,
    cols: usize,
    original_t: usize,
    indices: Vec<u32>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, original_t: usize, indices: Vec<u32>) -> Result<Self> {
        if indices.len() != rows * cols {
            return Err(Error::DimMismatch { expected: rows * cols, got: indices.len() });
        }
        Ok(TokenGrid { rows, cols, original_t, indices })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn original_t(&self) -> usize {
        self.original_t
    }

    /// Row-major token indices.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }
}

/// Squared Euclidean distance between equal-length vectors.
#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn nearest_in(entries: &[f64], k: usize, dim: usize, v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..k {
        let d = dist2(&entries[i * dim..(i + 1) * dim], v);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

/// Index and squared distance of the closest codebook entry.
pub fn nearest(cb: &Codebook, v: &[f64]) -> Result<(usize, f64)> {
    if v.len() != cb.dim {
        return Err(Error::DimMismatch { expected: cb.dim, got: v.len() });
    }
    Ok(nearest_in(&cb.entries, cb.k, cb.dim, v))
}

/// Map every vector of the grid to its nearest codebook index.
pub fn quantize(cb: &Codebook, grid: &VectorGrid) -> Result<TokenGrid> {
    if grid.dim() != cb.dim {
        return Err(Error::DimMismatch { expected: cb.dim, got: grid.dim() });
    }
    let indices = grid
        .iter_vectors()
        .map(|v| nearest_in(&cb.entries, cb.k, cb.dim, v).0 as u32)
        .collect();
    TokenGrid::new(grid.rows(), grid.cols(), grid.original_t(), indices)
}

/// Replace every token by its codebook vector.
pub fn dequantize(cb: &Codebook, tokens: &TokenGrid) -> Result<VectorGrid> {
    let mut data = Vec::with_capacity(tokens.indices.len() * cb.dim);
    for &idx in &tokens.indices {
        if idx as usize >= cb.k {
            return Err(Error::IndexOutOfRange { index: idx, k: cb.k as u32 });
        }
        data.extend_from_slice(cb.entry(idx as usize));
    }
    VectorGrid::new(tokens.rows, tokens.cols, cb.dim, tokens.original_t, data)
}

/// The two quantization penalties, kept separate so callers can report them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLossTerms {
    /// Mean squared distance pulling codebook entries toward latents.
    pub codebook_term: f64,
    /// Same distance scaled by `beta`, pulling latents toward their entry.
    pub commitment_term: f64,
    pub beta: f64,
}

impl VqLossTerms {
    pub fn total(&self) -> f64 {
        self.codebook_term + self.commitment_term
    }
}

/// Quantization losses between latents and their selected entries, averaged
/// over vectors: `mean ||z - e||^2` and `beta * mean ||z - e||^2`.
pub fn vq_loss(z: &VectorGrid, e: &VectorGrid, beta: f64) -> Result<VqLossTerms> {
    if z.dim() != e.dim() || z.count() != e.count() {
        return Err(Error::DimMismatch {
            expected: z.count() * z.dim(),
            got: e.count() * e.dim(),
        });
    }
    if z.count() == 0 {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    if !(0.0..=10.0).contains(&beta) {
        return Err(Error::InvalidConfig(alloc::format!("beta out of range: {beta}")));
    }
    let mut acc = 0.0;
    for (zv, ev) in z.iter_vectors().zip(e.iter_vectors()) {
        acc += dist2(zv, ev);
    }
    let mean = acc / z.count() as f64;
    Ok(VqLossTerms { codebook_term: mean, commitment_term: beta * mean, beta })
}

/// Total squared distance from each sample to its nearest entry.
pub fn inertia(cb: &Codebook, samples: &[f64], dim: usize) -> Result<f64> {
    if dim != cb.dim {
        return Err(Error::DimMismatch { expected: cb.dim, got: dim });
    }
    if samples.len() % dim != 0 {
        return Err(Error::NotDivisible { value: samples.len(), by: dim });
    }
    Ok(samples
        .chunks_exact(dim)
        .map(|v| nearest_in(&cb.entries, cb.k, cb.dim, v).1)
        .sum())
}

/// k-means++ initialization followed by `iters` Lloyd rounds.
///
/// Requires at least `k` samples. Empty clusters are reseeded from the
/// sample farthest from its current center before means are recomputed, so
/// every returned entry is backed by data. Same seed, same samples: same
/// codebook, bit for bit.
pub fn kmeans_fit(
    samples: &[f64],
    dim: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebook> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dim must be positive".into()));
    }
    if samples.len() % dim != 0 {
        return Err(Error::NotDivisible { value: samples.len(), by: dim });
    }
    let n = samples.len() / dim;
    if n < k {
        return Err(Error::TooFewItems { needed: k, got: n });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kmeans samples"));
    }
    let sample = |i: usize| &samples[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding: first uniform, rest d^2-weighted
    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centers.extend_from_slice(sample(first));
    let mut min_d2 = vec![0.0; n];
    for i in 0..n {
        min_d2[i] = dist2(sample(i), &centers[..dim]);
    }
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in min_d2.iter().enumerate() {
                r -= d;
                if r <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.extend_from_slice(sample(pick));
        let new_center = &centers[c * dim..(c + 1) * dim];
        for i in 0..n {
            let d = dist2(sample(i), new_center);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        // assignment step
        for i in 0..n {
            assign[i] = nearest_in(&centers, k, dim, sample(i)).0;
        }
        // update step
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for d in 0..dim {
                sums[c * dim + d] += samples[i * dim + d];
            }
        }
        // reseed empty clusters from the farthest assigned sample
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_i = usize::MAX;
            let mut far_d = -1.0;
            for i in 0..n {
                if taken[i] {
                    continue;
                }
                let d = dist2(sample(i), &centers[assign[i] * dim..assign[i] * dim + dim]);
                if d > far_d {
                    far_d = d;
                    far_i = i;
                }
            }
            // n >= k guarantees a free sample exists
            taken[far_i] = true;
            let prev = assign[far_i];
            counts[prev] -= 1;
            for d in 0..dim {
                sums[prev * dim + d] -= samples[far_i * dim + d];
            }
            assign[far_i] = c;
            counts[c] = 1;
            for d in 0..dim {
                sums[c * dim + d] = samples[far_i * dim + d];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // can only happen if a reseeded sample was stolen back; keep center
                continue;
            }
            for d in 0..dim {
                centers[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
            }
        }
    }
    Codebook::from_flat(centers, k, dim)
}

/// Exponential-moving-average codebook state (counts and vector sums).
///
/// Entries move only when assigned; unassigned entries keep both their
/// statistics and their position.
#[derive(Debug, Clone)]
pub struct EmaCodebook {
    codebook: Codebook,
    counts: Vec<f64>,
    sums: Vec<f64>,
}

impl EmaCodebook {
    /// Start from an existing codebook: counts at 1, sums at the entries.
    pub fn new(codebook: Codebook) -> Self {
        let counts = vec![1.0; codebook.k];
        let sums = codebook.entries.clone();
        EmaCodebook { codebook, counts, sums }
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn into_codebook(self) -> Codebook {
        self.codebook
    }

    /// One EMA step over a batch of vectors and their assignments:
    /// `N_k <- gamma N_k + (1-gamma) n_k`, same for the vector sums, then
    /// `e_k = m_k / (N_k + eps)` for every assigned entry.
    pub fn update(
        &mut self,
        batch: &[f64],
        assignments: &[u32],
        gamma: f64,
        eps: f64,
    ) -> Result<()> {
        let dim = self.codebook.dim;
        if batch.len() != assignments.len() * dim {
            return Err(Error::DimMismatch {
                expected: assignments.len() * dim,
                got: batch.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(alloc::format!("gamma out of range: {gamma}")));
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidConfig("eps must be positive".into()));
        }
        let k = self.codebook.k;
        let mut batch_counts = vec![0.0f64; k];
        let mut batch_sums = vec![0.0f64; k * dim];
        for (v, &a) in batch.chunks_exact(dim).zip(assignments.iter()) {
            let a = a as usize;
            if a >= k {
                return Err(Error::IndexOutOfRange { index: a as u32, k: k as u32 });
            }
            batch_counts[a] += 1.0;
            for d in 0..dim {
                batch_sums[a * dim + d] += v[d];
            }
        }
        for c in 0..k {
            if batch_counts[c] == 0.0 {
                continue;
            }
            self.counts[c] = gamma * self.counts[c] + (1.0 - gamma) * batch_counts[c];
            for d in 0..dim {
                let i = c * dim + d;
                self.sums[i] = gamma * self.sums[i] + (1.0 - gamma) * batch_sums[i];
                self.codebook.entries[i] = self.sums[i] / (self.counts[c] + eps);
            }
        }
        Ok(())
    }
}

/// Codebook usage over a set of token grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Utilization {
    pub histogram: Vec<u64>,
    /// `exp` of the entropy of the empirical token distribution; ranges from
    /// 1.0 (one entry used) to `k` (uniform usage).
    pub perplexity: f64,
    /// Entries that never appear.
    pub dead_count: usize,
}

/// Histogram, perplexity, and dead-entry count for `k` codebook entries.
pub fn utilization(k: usize, grids: &[TokenGrid]) -> Result<Utilization> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let mut histogram = vec![0u64; k];
    let mut total = 0u64;
    for g in grids {
        for &idx in &g.indices {
            if idx as usize >= k {
                return Err(Error::IndexOutOfRange { index: idx, k: k as u32 });
            }
            histogram[idx as usize] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let mut entropy = 0.0;
    let mut dead = 0;
    for &c in &histogram {
        if c == 0 {
            dead += 1;
            continue;
        }
        let p = c as f64 / total as f64;
        entropy -= p * p.ln_();
    }
    Ok(Utilization { histogram, perplexity: entropy.exp_(), dead_count: dead })
}
