//! Objective quality metrics: mel-cepstral distortion, short-time objective
//! intelligibility, and real-time factor.
//!
//! MCD works on DCT-II cepstra (coefficients 1..=13, unnormalized, c0
//! excluded) of the 80-band natural-log mel spectrogram:
//! `(10/ln 10) * sqrt(2 * sum_d (c_d - c'_d)^2)` averaged over frames.
//! Dropping c0 makes the measure invariant to uniform log-energy offsets,
//! i.e. to broadband gain.
//!
//! STOI resamples both signals to 10 kHz, drops frames more than 40 dB below
//! the loudest reference frame, pools 512-point spectra into 15 one-third
//! octave bands from 150 Hz, and correlates 30-frame band envelopes after
//! clipped level alignment. Identical inputs score 1 to within rounding.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::frontend::{hann_window, mel_spectrogram, resample, FrontendConfig, MelSpectrogram, Waveform};
use crate::math::{FloatExt, PI};

/// Cepstral coefficients compared by [`mcd`].
pub const MCD_COEFFS: usize = 13;

const LN10: f64 = core::f64::consts::LN_10;

/// DCT-II cepstra of each frame, coefficients `1..=n_coeffs` (c0 dropped).
pub fn mel_cepstra(m: &MelSpectrogram, n_coeffs: usize) -> Vec<Vec<f64>> {
    let bands = m.bands() as f64;
    let mut out = Vec::with_capacity(m.frames());
    for t in 0..m.frames() {
        let row = m.row(t);
        let mut coeffs = Vec::with_capacity(n_coeffs);
        for d in 1..=n_coeffs {
            let mut acc = 0.0;
            for (f, &v) in row.iter().enumerate() {
                acc += v * (PI * d as f64 * (f as f64 + 0.5) / bands).cos_();
            }
            coeffs.push(acc);
        }
        out.push(coeffs);
    }
    out
}

/// Mean mel-cepstral distortion between two cepstra sequences, compared over
/// the shorter of the two (callers align lengths; trailing frames of the
/// longer input are ignored).
pub fn mcd_from_cepstra(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let frames = a.len().min(b.len());
    if frames == 0 {
        return Err(Error::TooFewItems { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for (ca, cb) in a.iter().zip(b.iter()).take(frames) {
        if ca.len() != cb.len() {
            return Err(Error::DimMismatch { expected: ca.len(), got: cb.len() });
        }
        let mut d2 = 0.0;
        for (x, y) in ca.iter().zip(cb.iter()) {
            let d = x - y;
            d2 += d * d;
        }
        total += (10.0 / LN10) * (2.0 * d2).sqrt_();
    }
    Ok(total / frames as f64)
}

/// Mel-cepstral distortion between two waveforms at the same rate.
pub fn mcd(reference: &Waveform, degraded: &Waveform, cfg: &FrontendConfig) -> Result<f64> {
    if reference.sample_rate() != degraded.sample_rate() {
        return Err(Error::RateMismatch {
            expected: reference.sample_rate(),
            got: degraded.sample_rate(),
        });
    }
    let ca = mel_cepstra(&mel_spectrogram(reference, cfg)?, MCD_COEFFS);
    let cb = mel_cepstra(&mel_spectrogram(degraded, cfg)?, MCD_COEFFS);
    mcd_from_cepstra(&ca, &cb)
}

const STOI_SR: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_HOP: usize = 128;
const STOI_BANDS: usize = 15;
const STOI_LOW_CF: f64 = 150.0;
const STOI_SEG: usize = 30;
/// Clip level for the aligned degraded envelope, `-15` dB.
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt_()
}

/// Windowed frames at the STOI hop; returns (frame count, windowed frames).
fn stoi_frames(x: &[f64], window: &[f64]) -> Vec<Vec<f64>> {
    if x.len() < STOI_FRAME {
        return Vec::new();
    }
    let count = (x.len() - STOI_FRAME) / STOI_HOP + 1;
    (0..count)
        .map(|m| {
            let start = m * STOI_HOP;
            x[start..start + STOI_FRAME]
                .iter()
                .zip(window.iter())
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect()
}

/// Drop frames whose reference energy is 40 dB below the loudest frame, then
/// overlap-add the kept frames back into contiguous signals. The Hann window
/// at 50% overlap sums to one, so OLA of singly-windowed frames restores the
/// signal where frames are kept.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let window = hann_window(STOI_FRAME);
    let xf = stoi_frames(x, &window);
    let yf = stoi_frames(y, &window);
    let energies_db: Vec<f64> =
        xf.iter().map(|f| 20.0 * (norm2(f) + EPS).log10_()).collect();
    let max_db = energies_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = (0..xf.len())
        .filter(|&m| energies_db[m] > max_db - STOI_DYN_RANGE_DB)
        .collect();
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * STOI_HOP + STOI_FRAME };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (new_m, &m) in kept.iter().enumerate() {
        let start = new_m * STOI_HOP;
        for i in 0..STOI_FRAME {
            xs[start + i] += xf[m][i];
            ys[start + i] += yf[m][i];
        }
    }
    (xs, ys)
}

/// One-third octave band magnitudes: rows are frames, columns the 15 bands.
fn third_octave_bands(frames: &[Vec<f64>], fft: &Fft) -> Result<Vec<[f64; STOI_BANDS]>> {
    // band j spans cf * 2^(-1/6) .. cf * 2^(1/6) with cf = 150 * 2^(j/3)
    let bin_hz = STOI_SR as f64 / STOI_NFFT as f64;
    let mut bands: Vec<(usize, usize)> = Vec::with_capacity(STOI_BANDS);
    for j in 0..STOI_BANDS {
        let cf = STOI_LOW_CF * 2.0f64.powf_(j as f64 / 3.0);
        let lo = cf * 2.0f64.powf_(-1.0 / 6.0);
        let hi = cf * 2.0f64.powf_(1.0 / 6.0);
        let k_lo = (lo / bin_hz).ceil_() as usize;
        let k_hi = ((hi / bin_hz).ceil_() as usize).min(STOI_NFFT / 2 + 1);
        if k_lo >= k_hi {
            return Err(Error::Numeric(alloc::format!(
                "one-third octave band {j} covers no FFT bin"
            )));
        }
        bands.push((k_lo, k_hi));
    }
    let mut out = Vec::with_capacity(frames.len());
    let mut buf = vec![0.0; STOI_NFFT];
    for frame in frames {
        buf[..STOI_FRAME].copy_from_slice(frame);
        for v in buf[STOI_FRAME..].iter_mut() {
            *v = 0.0;
        }
        let spec = fft.real_forward(&buf)?;
        let mut row = [0.0; STOI_BANDS];
        for (j, &(k_lo, k_hi)) in bands.iter().enumerate() {
            let mut e = 0.0;
            for c in &spec[k_lo..k_hi] {
                e += c.norm_sqr();
            }
            row[j] = e.sqrt_();
        }
        out.push(row);
    }
    Ok(out)
}

/// Short-time objective intelligibility of `degraded` against `reference`.
///
/// Both signals must share a rate of at least 10 kHz and have equal length.
/// Errors if fewer than 30 analysis frames survive the energy gate (the
/// measure is undefined on such short or silent material).
pub fn stoi(reference: &Waveform, degraded: &Waveform) -> Result<f64> {
    if reference.sample_rate() != degraded.sample_rate() {
        return Err(Error::RateMismatch {
            expected: reference.sample_rate(),
            got: degraded.sample_rate(),
        });
    }
    if reference.len() != degraded.len() {
        return Err(Error::DimMismatch { expected: reference.len(), got: degraded.len() });
    }
    if reference.sample_rate() < STOI_SR {
        return Err(Error::InvalidConfig(alloc::format!(
            "stoi needs at least {STOI_SR} Hz input, got {}",
            reference.sample_rate()
        )));
    }
    let x10 = resample(reference, STOI_SR)?;
    let y10 = resample(degraded, STOI_SR)?;
    let (xs, ys) = remove_silent_frames(x10.samples(), y10.samples());

    let window = hann_window(STOI_FRAME);
    let xf = stoi_frames(&xs, &window);
    let yf = stoi_frames(&ys, &window);
    let frames = xf.len();
    if frames < STOI_SEG {
        return Err(Error::TooFewItems { needed: STOI_SEG, got: frames });
    }
    let fft = Fft::new(STOI_NFFT)?;
    let xb = third_octave_bands(&xf, &fft)?;
    let yb = third_octave_bands(&yf, &fft)?;

    let clip_gain = 1.0 + 10.0f64.powf_(-STOI_BETA_DB / 20.0);
    let segments = frames - STOI_SEG + 1;
    let mut acc = 0.0;
    let mut x_seg = [0.0; STOI_SEG];
    let mut y_seg = [0.0; STOI_SEG];
    for m0 in 0..segments {
        for j in 0..STOI_BANDS {
            for i in 0..STOI_SEG {
                x_seg[i] = xb[m0 + i][j];
                y_seg[i] = yb[m0 + i][j];
            }
            // scale the degraded envelope to the reference level, clipped
            let alpha = norm2(&x_seg) / (norm2(&y_seg) + EPS);
            for i in 0..STOI_SEG {
                y_seg[i] = (alpha * y_seg[i]).min(clip_gain * x_seg[i]);
            }
            let mx = x_seg.iter().sum::<f64>() / STOI_SEG as f64;
            let my = y_seg.iter().sum::<f64>() / STOI_SEG as f64;
            for i in 0..STOI_SEG {
                x_seg[i] -= mx;
                y_seg[i] -= my;
            }
            let nx = norm2(&x_seg) + EPS;
            let ny = norm2(&y_seg) + EPS;
            let mut corr = 0.0;
            for i in 0..STOI_SEG {
                corr += (x_seg[i] / nx) * (y_seg[i] / ny);
            }
            acc += corr;
        }
    }
    Ok(acc / (segments * STOI_BANDS) as f64)
}

/// Real-time factor: processing time over audio duration. Below 1.0 means
/// faster than real time.
pub fn rtf(elapsed_secs: f64, duration_secs: f64) -> Result<f64> {
    if !(duration_secs > 0.0) {
        return Err(Error::InvalidConfig("duration must be positive".into()));
    }
    if !(elapsed_secs >= 0.0) || !elapsed_secs.is_finite() {
        return Err(Error::InvalidConfig("elapsed time must be finite and non-negative".into()));
    }
    Ok(elapsed_secs / duration_secs)
}
