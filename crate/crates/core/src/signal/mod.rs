//! Sample buffers, FIR primitives and spectral helpers shared by every other
//! module. All arithmetic is `f64`; quantization only happens in [`wav`].

pub mod taps;
pub mod wav;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{AncError, Result};

/// A finite block of samples at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MonoSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl MonoSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(AncError::config("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AncError::input(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
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

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Copy of samples `[start, end)` as a new signal.
    pub fn slice(&self, start: usize, end: usize) -> MonoSignal {
        MonoSignal {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            (self.energy() / self.samples.len() as f64).sqrt()
        }
    }

    pub fn scaled(&self, gain: f64) -> MonoSignal {
        MonoSignal {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// FIR tap vector. Used for control filters, sub-filters and acoustic paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(AncError::config("FIR filter needs at least one tap"));
        }
        if let Some(i) = taps.iter().position(|t| !t.is_finite()) {
            return Err(AncError::input(format!("non-finite tap at index {i}")));
        }
        Ok(Self { taps })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "FIR filter needs at least one tap");
        Self {
            taps: vec![0.0; len],
        }
    }

    /// Unit impulse of the given length.
    pub fn delta(len: usize) -> Self {
        let mut f = Self::zeros(len);
        f.taps[0] = 1.0;
        f
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.taps.iter().fold(0.0, |m, t| m.max(t.abs()))
    }

    /// Magnitude of the frequency response on `n_fft / 2 + 1` uniformly
    /// spaced bins from DC to Nyquist (taps are zero padded to `n_fft`).
    pub fn magnitude_response(&self, n_fft: usize) -> Vec<f64> {
        assert!(n_fft >= self.taps.len(), "FFT shorter than filter");
        let spectrum = real_fft(&self.taps, n_fft);
        spectrum[..n_fft / 2 + 1].iter().map(|c| c.norm()).collect()
    }
}

/// The `capacity` most recent input samples, newest first.
///
/// Backed by a mirrored ring buffer so that [`DelayLine::contents`] is always
/// one contiguous slice.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
    capacity: usize,
}

impl DelayLine {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "delay line capacity must be positive");
        Self {
            buf: vec![0.0; 2 * capacity],
            pos: 0,
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, sample: f64) {
        self.pos = if self.pos == 0 {
            self.capacity - 1
        } else {
            self.pos - 1
        };
        self.buf[self.pos] = sample;
        self.buf[self.pos + self.capacity] = sample;
    }

    /// Newest sample at index 0.
    pub fn contents(&self) -> &[f64] {
        &self.buf[self.pos..self.pos + self.capacity]
    }

    pub fn energy(&self) -> f64 {
        self.contents().iter().map(|s| s * s).sum()
    }

    pub fn clear(&mut self) {
        self.buf.iter_mut().for_each(|s| *s = 0.0);
        self.pos = 0;
    }
}

/// Dot product of two equal-length slices.
#[inline]
/// Inner product over the common prefix. Four independent partial sums let
/// the loop vectorize; the result differs from a sequential sum only by
/// rounding.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// One output sample of `filter` given the delay-line contents. Tap 0
/// multiplies the newest sample.
pub fn fir_step(filter: &FirFilter, line: &DelayLine) -> Result<f64> {
    if filter.len() != line.capacity() {
        return Err(AncError::config(format!(
            "filter has {} taps but delay line holds {} samples",
            filter.len(),
            line.capacity()
        )));
    }
    Ok(dot(filter.taps(), line.contents()))
}

/// Truncated linear convolution with zero initial state; the output has the
/// same length as the input.
pub fn fir_convolve(filter: &FirFilter, signal: &MonoSignal) -> MonoSignal {
    // same summation as the sliding fir_step, so both agree bit for bit
    let mut line = DelayLine::new(filter.len());
    let out = signal
        .samples()
        .iter()
        .map(|&v| {
            line.push(v);
            dot(filter.taps(), line.contents())
        })
        .collect();
    MonoSignal {
        samples: out,
        sample_rate: signal.sample_rate(),
    }
}

pub(crate) fn real_fft(x: &[f64], n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    buf
}

/// Inverse FFT with `1/N` scaling, returning the real part.
pub(crate) fn real_ifft(mut spectrum: Vec<Complex64>) -> Vec<f64> {
    let n = spectrum.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    spectrum.iter().map(|c| c.re / n as f64).collect()
}

/// One-sided periodogram: per-bin energy such that the bins sum to the
/// time-domain energy of `x`. Returns `(bin frequency in Hz, energy)`.
pub fn periodogram(x: &[f64], sample_rate: u32) -> Vec<(f64, f64)> {
    let n = x.len();
    let spec = real_fft(x, n);
    let nf = n as f64;
    (0..=n / 2)
        .map(|k| {
            let mirrored = k != 0 && !(n % 2 == 0 && k == n / 2);
            let scale = if mirrored { 2.0 } else { 1.0 };
            let freq = k as f64 * sample_rate as f64 / nf;
            (freq, scale * spec[k].norm_sqr() / nf)
        })
        .collect()
}

/// Per-band energy of `frame`. A bin belongs to a band when its frequency is
/// in `[low, high)`; the Nyquist bin is also counted by a band whose upper
/// edge is exactly `fs / 2`.
pub fn band_energies(frame: &MonoSignal, band_edges: &[(f64, f64)]) -> Result<Vec<f64>> {
    if frame.len() < 2 {
        return Err(AncError::input(format!(
            "band energies need at least 2 samples, got {}",
            frame.len()
        )));
    }
    let nyquist = frame.sample_rate() as f64 / 2.0;
    for &(lo, hi) in band_edges {
        if !(lo >= 0.0 && lo < hi && hi <= nyquist) {
            return Err(AncError::config(format!(
                "band [{lo}, {hi}) not inside [0, {nyquist}]"
            )));
        }
    }
    let bins = periodogram(frame.samples(), frame.sample_rate());
    let energies = band_edges
        .iter()
        .map(|&(lo, hi)| {
            bins.iter()
                .filter(|(f, _)| (*f >= lo && *f < hi) || (hi == nyquist && *f == nyquist))
                .map(|(_, e)| e)
                .sum()
        })
        .collect();
    Ok(energies)
}

/// `count` equal-width contiguous bands covering `[low, high)`.
pub fn equal_bands(low: f64, high: f64, count: usize) -> Vec<(f64, f64)> {
    let width = (high - low) / count as f64;
    (0..count)
        .map(|m| {
            let lo = low + m as f64 * width;
            let hi = if m + 1 == count {
                high
            } else {
                low + (m + 1) as f64 * width
            };
            (lo, hi)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sig(v: &[f64]) -> MonoSignal {
        MonoSignal::new(v.to_vec(), 16_000).unwrap()
    }

    fn line_from(newest_first: &[f64]) -> DelayLine {
        let mut line = DelayLine::new(newest_first.len());
        for &s in newest_first.iter().rev() {
            line.push(s);
        }
        line
    }

    #[test]
    fn invalid_signal_and_filter_are_rejected() {
        assert!(MonoSignal::new(vec![0.0, f64::NAN], 16_000).is_err());
        assert!(MonoSignal::new(vec![0.0], 0).is_err());
        assert!(FirFilter::new(vec![]).is_err());
        assert!(FirFilter::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn delay_line_keeps_newest_first_and_zero_pads() {
        let mut line = DelayLine::new(3);
        assert_eq!(line.contents(), &[0.0, 0.0, 0.0]);
        line.push(1.0);
        assert_eq!(line.contents(), &[1.0, 0.0, 0.0]);
        line.push(2.0);
        line.push(3.0);
        line.push(4.0);
        assert_eq!(line.contents(), &[4.0, 3.0, 2.0]);
        assert_eq!(line.contents().len(), 3);
    }

    #[test]
    fn fir_step_examples() {
        let id = FirFilter::new(vec![1.0]).unwrap();
        assert_eq!(fir_step(&id, &line_from(&[3.0])).unwrap(), 3.0);

        let zero = FirFilter::zeros(4);
        assert_eq!(fir_step(&zero, &line_from(&[1.0, -2.0, 5.0, 9.0])).unwrap(), 0.0);

        let f = FirFilter::new(vec![1.0, 2.0]).unwrap();
        assert_eq!(fir_step(&f, &line_from(&[5.0, 7.0])).unwrap(), 19.0);
    }

    #[test]
    fn fir_step_length_mismatch_is_config_error() {
        let f = FirFilter::new(vec![1.0, 2.0]).unwrap();
        let err = fir_step(&f, &DelayLine::new(3)).unwrap_err();
        assert!(matches!(err, AncError::Config(_)));
    }

    #[test]
    fn fir_convolve_examples() {
        let x = sig(&[0.3, -1.0, 2.5, 4.0]);
        let delta = FirFilter::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(fir_convolve(&delta, &x), x);

        let delay = FirFilter::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            fir_convolve(&delay, &sig(&[1.0, 2.0, 3.0, 4.0])).samples(),
            &[0.0, 0.0, 1.0, 2.0]
        );

        let pair = FirFilter::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(fir_convolve(&pair, &sig(&[1.0, 1.0, 1.0])).samples(), &[1.0, 2.0, 2.0]);
    }

    #[test]
    fn sliding_fir_step_matches_convolution_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let taps: Vec<f64> = (0..17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FirFilter::new(taps).unwrap();
        let conv = fir_convolve(&f, &sig(&x));
        let mut line = DelayLine::new(f.len());
        for (n, &s) in x.iter().enumerate() {
            line.push(s);
            assert_eq!(fir_step(&f, &line).unwrap(), conv.samples()[n]);
        }
    }

    #[test]
    fn band_energies_of_silence_are_zero() {
        let e = band_energies(&MonoSignal::zeros(256, 16_000), &[(20.0, 500.0), (500.0, 900.0)])
            .unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
    }

    #[test]
    fn band_energies_rejects_short_frames_and_bad_bands() {
        assert!(matches!(
            band_energies(&sig(&[1.0]), &[(20.0, 500.0)]),
            Err(AncError::Input(_))
        ));
        assert!(matches!(
            band_energies(&sig(&[1.0, 2.0]), &[(600.0, 500.0)]),
            Err(AncError::Config(_))
        ));
        assert!(band_energies(&sig(&[1.0, 2.0]), &[(20.0, 9000.0)]).is_err());
    }

    #[test]
    fn pure_tone_energy_lands_in_its_band() {
        let fs = 16_000u32;
        let x: Vec<f64> = (0..fs as usize)
            .map(|n| (2.0 * std::f64::consts::PI * 500.0 * n as f64 / fs as f64).sin())
            .collect();
        let e = band_energies(&sig(&x), &[(20.0, 515.0), (515.0, 1010.0)]).unwrap();
        let total: f64 = x.iter().map(|s| s * s).sum();
        assert!(e[0] >= 0.99 * total, "{} vs {}", e[0], total);
    }

    #[test]
    fn white_noise_splits_evenly_between_equal_bands() {
        let mut acc = [0.0; 2];
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = band_energies(&sig(&x), &[(100.0, 3000.0), (3000.0, 5900.0)]).unwrap();
            acc[0] += e[0];
            acc[1] += e[1];
        }
        let ratio = acc[0] / acc[1];
        assert!((ratio - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn equal_bands_partition_the_range() {
        let b = equal_bands(20.0, 2000.0, 8);
        assert_eq!(b.len(), 8);
        assert_eq!(b[0], (20.0, 267.5));
        assert_eq!(b[1], (267.5, 515.0));
        assert_eq!(b[7].1, 2000.0);
        for w in b.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    proptest! {
        #[test]
        fn delta_filter_is_identity(x in prop::collection::vec(-1e3f64..1e3, 1..64), len in 1usize..8) {
            let s = sig(&x);
            prop_assert_eq!(fir_convolve(&FirFilter::delta(len), &s), s);
        }

        #[test]
        fn convolution_is_linear(
            taps in prop::collection::vec(-2.0f64..2.0, 1..12),
            xy in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..64),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let f = FirFilter::new(taps).unwrap();
            let x: Vec<f64> = xy.iter().map(|p| p.0).collect();
            let y: Vec<f64> = xy.iter().map(|p| p.1).collect();
            let mix: Vec<f64> = xy.iter().map(|p| a * p.0 + b * p.1).collect();
            let lhs = fir_convolve(&f, &sig(&mix));
            let fx = fir_convolve(&f, &sig(&x));
            let fy = fir_convolve(&f, &sig(&y));
            let scale = lhs.samples().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for n in 0..x.len() {
                let rhs = a * fx.samples()[n] + b * fy.samples()[n];
                prop_assert!((lhs.samples()[n] - rhs).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn band_energies_satisfy_parseval(x in prop::collection::vec(-1.0f64..1.0, 2..300)) {
            let s = sig(&x);
            let e = band_energies(&s, &[(0.0, 3000.0), (3000.0, 8000.0)]).unwrap();
            let time: f64 = x.iter().map(|v| v * v).sum();
            let freq: f64 = e.iter().sum();
            prop_assert!((time - freq).abs() <= 1e-6 * time.max(1e-300));
        }
    }
}
