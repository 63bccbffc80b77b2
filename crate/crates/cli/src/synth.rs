//! Deterministic synthetic test signals.
//!
//! Nothing here pretends to be real speech; the goal is material with
//! speech-like structure (voiced harmonics under formant envelopes, noise
//! bursts, pauses) that exercises the codec and keeps every intelligibility
//! band alive. A constant low-level noise floor prevents exactly-constant
//! spectrogram regions, which would make band-envelope correlations 0/0.

use std::path::{Path, PathBuf};

use melpatch_core::frontend::Waveform;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::wav;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthStyle {
    /// Voiced/unvoiced/pause segments with glides and formants.
    Speech,
    /// Loud broadband buzz alternating with near-silence at a 50% duty
    /// cycle. Patch vectors form two well-separated clusters, which is the
    /// shape a K=2 codebook is expected to resolve.
    Alternating,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub style: SynthStyle,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub seed: u64,
}

const NOISE_FLOOR: f64 = 0.0025;
const TARGET_PEAK: f64 = 0.45;

/// Raised-cosine fade at both ends, `fade` samples each.
fn envelope(i: usize, len: usize, fade: usize) -> f64 {
    let fade = fade.min(len / 2).max(1);
    if i < fade {
        0.5 - 0.5 * (core::f64::consts::PI * i as f64 / fade as f64).cos()
    } else if i + fade >= len {
        let j = len - 1 - i;
        0.5 - 0.5 * (core::f64::consts::PI * j as f64 / fade as f64).cos()
    } else {
        1.0
    }
}

fn formant_gain(freq: f64, formants: &[(f64, f64, f64)]) -> f64 {
    let mut g = 0.0;
    for &(center, bw, amp) in formants {
        let d = (freq - center) / bw;
        g += amp * (-0.5 * d * d).exp();
    }
    g
}

fn add_voiced(out: &mut [f64], sr: f64, rng: &mut ChaCha8Rng) {
    let len = out.len();
    let f0_start: f64 = rng.gen_range(90.0..220.0);
    let f0_end = f0_start * rng.gen_range(0.85..1.15);
    let formants = [
        (rng.gen_range(300.0..900.0), 120.0, 1.0),
        (rng.gen_range(900.0..2400.0), 180.0, 0.6),
        (rng.gen_range(2400.0..3500.0), 260.0, 0.3),
    ];
    let amp = rng.gen_range(0.18..0.30);
    let nyquist_guard = 0.45 * sr;
    let max_f0 = f0_start.max(f0_end);
    let n_harm = (nyquist_guard / max_f0) as usize;
    let mut phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..core::f64::consts::TAU)).collect();
    let fade = (0.02 * sr) as usize;
    for i in 0..len {
        let t = i as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * t;
        let mut s = 0.0;
        for (h, phase) in phases.iter_mut().enumerate() {
            let freq = (h + 1) as f64 * f0;
            // phase accumulation keeps the glide click-free
            *phase += core::f64::consts::TAU * freq / sr;
            let g = formant_gain(freq, &formants) / (1.0 + h as f64).sqrt();
            s += g * phase.sin();
        }
        out[i] += amp * envelope(i, len, fade) * s * 0.25;
    }
}

fn add_noise_burst(out: &mut [f64], sr: f64, rng: &mut ChaCha8Rng) {
    let len = out.len();
    let amp = rng.gen_range(0.05..0.12);
    let fade = (0.01 * sr) as usize;
    // crude high-tilt: difference of successive white samples
    let mut prev = 0.0;
    for (i, o) in out.iter_mut().enumerate().take(len) {
        let w: f64 = rng.gen_range(-1.0..1.0);
        *o += amp * envelope(i, len, fade) * (w - 0.5 * prev);
        prev = w;
    }
}

fn speech_like(sr: u32, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let srf = sr as f64;
    let mut samples = vec![0.0f64; n];
    let mut pos = 0usize;
    while pos < n {
        let roll: f64 = rng.gen();
        let (kind, dur_s) = if roll < 0.60 {
            (0, rng.gen_range(0.15..0.40))
        } else if roll < 0.85 {
            (1, rng.gen_range(0.05..0.15))
        } else {
            (2, rng.gen_range(0.04..0.12))
        };
        let seg_len = ((dur_s * srf) as usize).min(n - pos).max(1);
        let seg = &mut samples[pos..pos + seg_len];
        match kind {
            0 => add_voiced(seg, srf, &mut rng),
            1 => add_noise_burst(seg, srf, &mut rng),
            _ => {}
        }
        pos += seg_len;
    }
    samples
}

fn alternating(sr: u32, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let srf = sr as f64;
    let block = 2048usize; // 16 hop frames at the default hop of 128
    let f0 = 110.0;
    let n_harm = (0.45 * srf / f0) as usize;
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..core::f64::consts::TAU)).collect();
    let mut samples = vec![0.0f64; n];
    for (i, s) in samples.iter_mut().enumerate() {
        if (i / block) % 2 == 1 {
            continue; // quiet block: floor noise only, added later
        }
        let t = i as f64 / srf;
        let mut v = 0.0;
        for (h, ph) in phases.iter().enumerate() {
            let freq = (h + 1) as f64 * f0;
            v += (core::f64::consts::TAU * freq * t + ph).sin() / (1.0 + h as f64).sqrt();
        }
        *s = 0.3 * v / (n_harm as f64).sqrt();
    }
    samples
}

/// Render one deterministic utterance.
pub fn synthesize(spec: &SynthSpec) -> Result<Waveform> {
    let n = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    let mut samples = match spec.style {
        SynthStyle::Speech => speech_like(spec.sample_rate, n, spec.seed),
        SynthStyle::Alternating => alternating(spec.sample_rate, n, spec.seed),
    };
    // independent stream for the floor so segment structure doesn't shift it
    let mut floor_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
    for s in samples.iter_mut() {
        *s += NOISE_FLOOR * floor_rng.gen_range(-1.0f64..1.0);
    }
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = TARGET_PEAK / peak;
        for s in samples.iter_mut() {
            *s *= scale;
        }
    }
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

/// Derive the seed for utterance `index` from a corpus-level seed.
pub fn utterance_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Write `count` WAVs named `utt_000.wav`, `utt_001.wav`, ... into `dir`.
pub fn write_corpus(
    dir: &Path,
    style: SynthStyle,
    sample_rate: u32,
    duration_s: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let spec = SynthSpec {
            style,
            sample_rate,
            duration_s,
            seed: utterance_seed(seed, i),
        };
        let w = synthesize(&spec)?;
        let path = dir.join(format!("utt_{i:03}.wav"));
        wav::write_wav(&path, &w)?;
        paths.push(path);
    }
    Ok(paths)
}
