//! Radix-2 FFT used by the STFT and the intelligibility metric.
//!
//! Sizes are restricted to powers of two (the frontend validates `n_fft`),
//! which keeps the transform a single iterative Cooley-Tukey pass over a
//! precomputed twiddle table. Real-input helpers return only the
//! non-redundant half spectrum.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math::{FloatExt, TAU};

/// FFT plan for one transform size.
pub struct Fft {
    n: usize,
    /// twiddles[k] = exp(-2*pi*i*k/n) for k < n/2
    twiddles: Vec<Complex64>,
}

impl Fft {
    /// Build a plan for size `n`, which must be a power of two >= 2.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidConfig(alloc::format!(
                "fft size must be a power of two >= 2, got {n}"
            )));
        }
        let mut twiddles = Vec::with_capacity(n / 2);
        for k in 0..n / 2 {
            let angle = -TAU * k as f64 / n as f64;
            twiddles.push(Complex64::new(angle.cos_(), angle.sin_()));
        }
        Ok(Fft { n, twiddles })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// In-place forward transform. `buf.len()` must equal the plan size.
    pub fn forward(&self, buf: &mut [Complex64]) -> Result<()> {
        if buf.len() != self.n {
            return Err(Error::DimMismatch { expected: self.n, got: buf.len() });
        }
        bit_reverse_permute(buf);
        let n = self.n;
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            let mut start = 0;
            while start < n {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
                start += len;
            }
            len *= 2;
        }
        Ok(())
    }

    /// In-place inverse transform, scaled by 1/n.
    pub fn inverse(&self, buf: &mut [Complex64]) -> Result<()> {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf)?;
        let scale = 1.0 / self.n as f64;
        for v in buf.iter_mut() {
            *v = v.conj() * scale;
        }
        Ok(())
    }

    /// Forward transform of a real signal; returns bins `0..=n/2`.
    pub fn real_forward(&self, samples: &[f64]) -> Result<Vec<Complex64>> {
        if samples.len() != self.n {
            return Err(Error::DimMismatch { expected: self.n, got: samples.len() });
        }
        let mut buf: Vec<Complex64> =
            samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut buf)?;
        buf.truncate(self.n / 2 + 1);
        Ok(buf)
    }

    /// Inverse of [`Fft::real_forward`]: expands the Hermitian half spectrum
    /// and returns the real signal of length `n`.
    pub fn real_inverse(&self, half: &[Complex64]) -> Result<Vec<f64>> {
        let bins = self.n / 2 + 1;
        if half.len() != bins {
            return Err(Error::DimMismatch { expected: bins, got: half.len() });
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        buf[..bins].copy_from_slice(half);
        for k in 1..self.n / 2 {
            buf[self.n - k] = half[k].conj();
        }
        self.inverse(&mut buf)?;
        Ok(buf.iter().map(|c| c.re).collect())
    }
}

fn bit_reverse_permute(buf: &mut [Complex64]) {
    let n = buf.len();
    let shift = n.leading_zeros() + 1;
    for i in 0..n {
        let j = i.reverse_bits() >> shift;
        if j > i {
            buf.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::FloatExt;
    use approx::assert_relative_eq;

    /// O(n^2) reference DFT; the oracle the fast path is checked against.
    fn dft(input: &[Complex64]) -> Vec<Complex64> {
        let n = input.len();
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (t, &x) in input.iter().enumerate() {
                    let angle = -TAU * (k * t) as f64 / n as f64;
                    acc += x * Complex64::new(angle.cos_(), angle.sin_());
                }
                acc
            })
            .collect()
    }

    #[test]
    fn forward_matches_direct_dft() {
        for &n in &[2usize, 8, 64, 512] {
            let plan = Fft::new(n).unwrap();
            // deterministic non-symmetric input
            let input: Vec<Complex64> = (0..n)
                .map(|i| {
                    let x = (0.3 * i as f64).sin_() + 0.1 * i as f64;
                    let y = (0.7 * i as f64).cos_();
                    Complex64::new(x, y)
                })
                .collect();
            let expected = dft(&input);
            let mut buf = input.clone();
            plan.forward(&mut buf).unwrap();
            for (got, want) in buf.iter().zip(expected.iter()) {
                assert_relative_eq!(got.re, want.re, epsilon = 1e-8, max_relative = 1e-8);
                assert_relative_eq!(got.im, want.im, epsilon = 1e-8, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn inverse_round_trips() {
        let plan = Fft::new(256).unwrap();
        let input: Vec<Complex64> = (0..256)
            .map(|i| Complex64::new((i as f64 * 0.11).sin_(), (i as f64 * 0.05).cos_()))
            .collect();
        let mut buf = input.clone();
        plan.forward(&mut buf).unwrap();
        plan.inverse(&mut buf).unwrap();
        for (got, want) in buf.iter().zip(input.iter()) {
            assert_relative_eq!(got.re, want.re, epsilon = 1e-10);
            assert_relative_eq!(got.im, want.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn real_round_trip_and_hermitian_layout() {
        let plan = Fft::new(128).unwrap();
        let signal: Vec<f64> = (0..128).map(|i| (i as f64 * 0.21).sin_() * 0.5).collect();
        let half = plan.real_forward(&signal).unwrap();
        assert_eq!(half.len(), 65);
        // DC and Nyquist of a real signal are real
        assert!(half[0].im.abs() < 1e-9);
        assert!(half[64].im.abs() < 1e-9);
        let back = plan.real_inverse(&half).unwrap();
        for (got, want) in back.iter().zip(signal.iter()) {
            assert_relative_eq!(got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(Fft::new(0).is_err());
        assert!(Fft::new(1).is_err());
        assert!(Fft::new(96).is_err());
    }

    #[test]
    fn pure_tone_lands_in_one_bin() {
        let n = 512;
        let plan = Fft::new(n).unwrap();
        let bin = 37;
        let signal: Vec<f64> =
            (0..n).map(|i| (TAU * bin as f64 * i as f64 / n as f64).cos_()).collect();
        let half = plan.real_forward(&signal).unwrap();
        let mags: Vec<f64> = half.iter().map(|c| c.norm_sqr().sqrt_()).collect();
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(peak, bin);
        assert_relative_eq!(mags[bin], n as f64 / 2.0, max_relative = 1e-9);
    }
}
