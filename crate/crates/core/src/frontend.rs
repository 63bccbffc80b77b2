//! Signal frontend: waveform container, STFT, log-mel analysis, Griffin-Lim
//! synthesis, and sample-rate conversion.
//!
//! Conventions, fixed here and relied on by every later stage:
//! - frames are taken every `hop` samples with reflect padding of `n_fft/2`
//!   on both ends, so a signal of `len` samples yields `len/hop + 1` frames;
//! - the analysis window is a periodic Hann of `win_length`, zero-centered
//!   inside the `n_fft` buffer when shorter;
//! - mel filters are triangles on the HTK mel scale with peak weight 1.0
//!   applied to the *power* spectrum;
//! - mel energies are compressed with the natural log after flooring at
//!   `log_floor`, so silence maps to exactly `ln(log_floor)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::math::{bessel_i0, sinc, FloatExt, TAU};

/// Mono audio in `[-1, 1]` at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Wraps samples, rejecting a zero rate or non-finite values.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Analysis/synthesis parameters shared by the encoder and decoder.
///
/// `fmax` of 0.0 means "use Nyquist"; that keeps the default independent of
/// the sample rate field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontendConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            sample_rate: 16_000,
            n_fft: 512,
            hop: 128,
            win_length: 512,
            n_mels: 80,
            fmin: 0.0,
            fmax: 0.0,
            log_floor: 1e-5,
        }
    }
}

impl FrontendConfig {
    /// Effective upper band edge in Hz.
    pub fn fmax_hz(&self) -> f64 {
        if self.fmax > 0.0 {
            self.fmax
        } else {
            self.sample_rate as f64 / 2.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if self.n_fft < 2 || !self.n_fft.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "n_fft must be a power of two >= 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "hop must be in 1..=n_fft, got {}",
                self.hop
            )));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(Error::InvalidConfig(format!(
                "win_length must be in 1..=n_fft, got {}",
                self.win_length
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be positive".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        let fmax = self.fmax_hz();
        if self.fmin < 0.0 || self.fmin >= fmax || fmax > nyquist + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "band edges must satisfy 0 <= fmin < fmax <= nyquist, got {} and {}",
                self.fmin, fmax
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Number of STFT frames produced for `n_samples` of audio.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples / self.hop + 1
    }
}

/// Log-mel spectrogram: `frames` rows of `bands` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    frames: usize,
    bands: usize,
    config: FrontendConfig,
}

impl MelSpectrogram {
    /// Assembles a spectrogram from row-major values.
    pub fn from_values(
        values: Vec<f64>,
        frames: usize,
        bands: usize,
        config: FrontendConfig,
    ) -> Result<Self> {
        if values.len() != frames * bands {
            return Err(Error::DimMismatch { expected: frames * bands, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel values"));
        }
        Ok(MelSpectrogram { values, frames, bands, config })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.config
    }

    pub fn value(&self, frame: usize, band: usize) -> f64 {
        self.values[frame * self.bands + band]
    }

    /// One frame of band values.
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.bands..(frame + 1) * self.bands]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean absolute difference over all cells; shapes must match.
    pub fn l1_distance(&self, other: &MelSpectrogram) -> Result<f64> {
        if self.frames != other.frames || self.bands != other.bands {
            return Err(Error::DimMismatch {
                expected: self.frames * self.bands,
                got: other.frames * other.bands,
            });
        }
        if self.values.is_empty() {
            return Err(Error::TooFewItems { needed: 1, got: 0 });
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs_())
            .sum();
        Ok(sum / self.values.len() as f64)
    }
}

/// Periodic Hann window of the given length.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 * (1.0 - (TAU * i as f64 / len as f64).cos_())).collect()
}

/// Index into a reflect-padded view of `0..len` (edge sample not repeated).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Window of `win_length`, zero-padded symmetrically to `n_fft` samples.
fn padded_window(cfg: &FrontendConfig) -> Vec<f64> {
    let mut w = vec![0.0; cfg.n_fft];
    let offset = (cfg.n_fft - cfg.win_length) / 2;
    for (i, v) in hann_window(cfg.win_length).into_iter().enumerate() {
        w[offset + i] = v;
    }
    w
}

fn frame_signal(samples: &[f64], cfg: &FrontendConfig, frame: usize, out: &mut [f64]) {
    let pad = cfg.n_fft as isize / 2;
    let start = frame as isize * cfg.hop as isize - pad;
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = samples[reflect_index(start + i as isize, samples.len())];
    }
}

/// Complex STFT; used internally by Griffin-Lim.
fn stft_complex(samples: &[f64], cfg: &FrontendConfig) -> Result<Vec<Vec<Complex64>>> {
    if samples.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let fft = Fft::new(cfg.n_fft)?;
    let window = padded_window(cfg);
    let frames = cfg.frame_count(samples.len());
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![0.0; cfg.n_fft];
    for t in 0..frames {
        frame_signal(samples, cfg, t, &mut buf);
        for (b, w) in buf.iter_mut().zip(window.iter()) {
            *b *= w;
        }
        out.push(fft.real_forward(&buf)?);
    }
    Ok(out)
}

/// Magnitude STFT: `frames` rows of `n_fft/2 + 1` bins.
pub fn stft_magnitude(w: &Waveform, cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::RateMismatch { expected: cfg.sample_rate, got: w.sample_rate() });
    }
    let spectra = stft_complex(w.samples(), cfg)?;
    Ok(spectra
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.norm_sqr().sqrt_()).collect())
        .collect())
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10_()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf_(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank: `n_mels` rows of `n_fft/2 + 1` weights.
///
/// Triangles have unit peak (no area normalization). Errors if any filter
/// ends up with no positive weight, which happens when the mel spacing is
/// finer than the FFT bin spacing.
pub fn mel_filterbank(cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let bins = cfg.n_fft / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax_hz());
    // n_mels + 2 edge points, uniformly spaced in mel
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut bank = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        let mut row = vec![0.0; bins];
        let mut any = false;
        for (k, slot) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            let w = up.min(down).max(0.0);
            if w > 0.0 {
                any = true;
            }
            *slot = w;
        }
        if !any {
            return Err(Error::DegenerateMelFilter { index: m });
        }
        bank.push(row);
    }
    Ok(bank)
}

/// Log-mel spectrogram of a waveform.
///
/// Power spectra are pooled through the filterbank, floored at
/// `cfg.log_floor`, and compressed with the natural log.
pub fn mel_spectrogram(w: &Waveform, cfg: &FrontendConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.sample_rate() != cfg.sample_rate {
        return Err(Error::RateMismatch { expected: cfg.sample_rate, got: w.sample_rate() });
    }
    if w.is_empty() {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let bank = mel_filterbank(cfg)?;
    let spectra = stft_complex(w.samples(), cfg)?;
    let frames = spectra.len();
    let mut values = Vec::with_capacity(frames * cfg.n_mels);
    for row in &spectra {
        for filter in &bank {
            let mut e = 0.0;
            for (c, w) in row.iter().zip(filter.iter()) {
                if *w > 0.0 {
                    e += c.norm_sqr() * w;
                }
            }
            values.push(e.max(cfg.log_floor).ln_());
        }
    }
    MelSpectrogram::from_values(values, frames, cfg.n_mels, *cfg)
}

/// Inverse STFT with squared-window overlap-add normalization; returns
/// exactly `(frames - 1) * hop` samples (the reflect padding is trimmed).
fn istft(spectra: &[Vec<Complex64>], cfg: &FrontendConfig) -> Result<Vec<f64>> {
    let frames = spectra.len();
    if frames == 0 {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let fft = Fft::new(cfg.n_fft)?;
    let window = padded_window(cfg);
    let padded_len = (frames - 1) * cfg.hop + cfg.n_fft;
    let mut acc = vec![0.0; padded_len];
    let mut wsum = vec![0.0; padded_len];
    for (t, spec) in spectra.iter().enumerate() {
        let frame = fft.real_inverse(spec)?;
        let start = t * cfg.hop;
        for i in 0..cfg.n_fft {
            acc[start + i] += frame[i] * window[i];
            wsum[start + i] += window[i] * window[i];
        }
    }
    let pad = cfg.n_fft / 2;
    let out_len = (frames - 1) * cfg.hop;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let j = pad + i;
        out.push(if wsum[j] > 1e-8 { acc[j] / wsum[j] } else { 0.0 });
    }
    Ok(out)
}

/// Recover linear-power magnitudes from a log-mel spectrogram through the
/// Moore-Penrose pseudo-inverse of the filterbank, clamped at zero.
fn mel_to_magnitude(m: &MelSpectrogram, cfg: &FrontendConfig) -> Result<Vec<Vec<f64>>> {
    let bank = mel_filterbank(cfg)?;
    let bins = cfg.n_fft / 2 + 1;
    let n = cfg.n_mels;
    // Gram matrix G = bank * bank^T, then pinv = bank^T * G^-1
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut dot = 0.0;
            for k in 0..bins {
                dot += bank[i][k] * bank[j][k];
            }
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }
    // adjacent low-frequency filters can overlap on a single FFT bin, which
    // makes G rank-deficient; a relative ridge keeps the inverse stable
    let mut trace = 0.0;
    for i in 0..n {
        trace += gram[i * n + i];
    }
    let ridge = 1e-8 * trace / n as f64;
    for i in 0..n {
        gram[i * n + i] += ridge;
    }
    let ginv = crate::math::invert_matrix(&gram, n)?;
    let mut mags = Vec::with_capacity(m.frames());
    for t in 0..m.frames() {
        let row = m.row(t);
        // energies back out of the log domain
        let energies: Vec<f64> = row.iter().map(|v| v.exp_()).collect();
        // y = G^-1 * e, then power[k] = bank^T[k] . y
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += ginv[i * n + j] * energies[j];
            }
            y[i] = acc;
        }
        let mut mag_row = Vec::with_capacity(bins);
        for k in 0..bins {
            let mut p = 0.0;
            for i in 0..n {
                if bank[i][k] > 0.0 {
                    p += bank[i][k] * y[i];
                }
            }
            mag_row.push(p.max(0.0).sqrt_());
        }
        mags.push(mag_row);
    }
    Ok(mags)
}

/// Griffin-Lim phase reconstruction.
///
/// Starts from zero phase, runs `iters` STFT/ISTFT projection rounds, and
/// returns `(frames - 1) * hop` samples clipped to `[-1, 1]`.
pub fn griffin_lim(m: &MelSpectrogram, iters: usize) -> Result<Waveform> {
    let cfg = *m.config();
    cfg.validate()?;
    if m.frames() == 0 {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    if m.bands() != cfg.n_mels {
        return Err(Error::DimMismatch { expected: cfg.n_mels, got: m.bands() });
    }
    let mags = mel_to_magnitude(m, &cfg)?;
    let mut spectra: Vec<Vec<Complex64>> = mags
        .iter()
        .map(|row| row.iter().map(|&r| Complex64::new(r, 0.0)).collect())
        .collect();
    for _ in 0..iters {
        let x = istft(&spectra, &cfg)?;
        if x.is_empty() {
            break; // single frame: nothing to re-project
        }
        let reproj = stft_complex(&x, &cfg)?;
        for (t, row) in spectra.iter_mut().enumerate() {
            for (k, slot) in row.iter_mut().enumerate() {
                let c = reproj[t][k];
                let norm = c.norm_sqr().sqrt_();
                let unit = if norm > 1e-12 { c / norm } else { Complex64::new(1.0, 0.0) };
                *slot = unit * mags[t][k];
            }
        }
    }
    let mut samples = istft(&spectra, &cfg)?;
    for s in samples.iter_mut() {
        *s = s.clamp(-1.0, 1.0);
    }
    Waveform::new(samples, cfg.sample_rate)
}

/// Windowed-sinc resampler (Kaiser beta 8.6, 64 zero crossings).
///
/// The kernel is scaled by `min(1, target/source)` so downsampling low-passes
/// at the new Nyquist. Equal rates return the input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target rate must be positive".into()));
    }
    if target_rate == w.sample_rate() {
        return Ok(w.clone());
    }
    let src = w.sample_rate() as f64;
    let dst = target_rate as f64;
    let x = w.samples();
    let out_len =
        ((x.len() as u64 * target_rate as u64 + w.sample_rate() as u64 / 2)
            / w.sample_rate() as u64) as usize;
    const ZERO_CROSSINGS: f64 = 64.0;
    const BETA: f64 = 8.6;
    let rho = (dst / src).min(1.0);
    let half_width = ZERO_CROSSINGS / rho;
    let i0_beta = bessel_i0(BETA);
    let step = src / dst;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let center = j as f64 * step;
        let lo = ((center - half_width).ceil_() as isize).max(0) as usize;
        let hi = ((center + half_width).floor_() as isize).min(x.len() as isize - 1);
        if hi < 0 {
            out.push(0.0);
            continue;
        }
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate().take(hi as usize + 1).skip(lo) {
            let d = i as f64 - center;
            let u = rho * d / ZERO_CROSSINGS;
            if u.abs_() >= 1.0 {
                continue;
            }
            let taper = bessel_i0(BETA * (1.0 - u * u).sqrt_()) / i0_beta;
            acc += xi * rho * sinc(rho * d) * taper;
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}
