//! Synthetic reference-noise generation.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{AncError, Result};
use crate::signal::{fir_convolve, wav, FirFilter, MonoSignal};

/// Length of the linear-phase bandpass used to shape white noise.
pub const BANDPASS_TAPS: usize = 255;

/// Hamming-windowed sinc bandpass with passband `[low, high]` Hz. A `low`
/// of zero gives a lowpass.
pub fn design_bandpass(num_taps: usize, low: f64, high: f64, sample_rate: u32) -> Result<FirFilter> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(low >= 0.0 && low < high && high < nyquist) {
        return Err(AncError::config(format!(
            "bandpass edges ({low}, {high}) must satisfy 0 <= low < high < {nyquist}"
        )));
    }
    if num_taps == 0 {
        return Err(AncError::config("bandpass needs at least one tap"));
    }
    let fs = sample_rate as f64;
    let center = (num_taps - 1) as f64 / 2.0;
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let taps = (0..num_taps)
        .map(|i| {
            let t = i as f64 - center;
            let window = if num_taps == 1 {
                1.0
            } else {
                0.54 - 0.46 * (2.0 * PI * i as f64 / (num_taps - 1) as f64).cos()
            };
            let ideal = 2.0 * high / fs * sinc(2.0 * high / fs * t) - 2.0 * low / fs * sinc(2.0 * low / fs * t);
            window * ideal
        })
        .collect();
    FirFilter::new(taps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tone {
    pub freq_hz: f64,
    /// Tone power relative to the power of the band-limited noise component.
    pub level_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    BandpassWhite { band: (f64, f64) },
    /// Optional band-limited noise plus sinusoids with seeded random phases.
    ToneMix {
        band: Option<(f64, f64)>,
        tones: Vec<Tone>,
    },
    /// Recording; truncated to `duration_s` and RMS-normalized.
    WavFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub duration_s: f64,
    pub seed: u64,
    /// Target RMS of the output.
    pub level: f64,
    pub sample_rate: u32,
}

impl NoiseSpec {
    pub fn bandpass(band: (f64, f64), duration_s: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::BandpassWhite { band },
            duration_s,
            seed,
            level: 1.0,
            sample_rate: 16_000,
        }
    }

    /// Road-vehicle stand-in: 40-400 Hz band noise with 80 Hz and 160 Hz
    /// engine orders 6 dB above the band noise.
    pub fn vehicle(duration_s: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::ToneMix {
                band: Some((40.0, 400.0)),
                tones: vec![
                    Tone { freq_hz: 80.0, level_db: 6.0 },
                    Tone { freq_hz: 160.0, level_db: 6.0 },
                ],
            },
            duration_s,
            seed,
            level: 1.0,
            sample_rate: 16_000,
        }
    }

    /// Aircraft-cabin stand-in: 50-1000 Hz band noise with a blade-pass
    /// tone at 120 Hz and its second harmonic.
    pub fn aircraft(duration_s: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::ToneMix {
                band: Some((50.0, 1000.0)),
                tones: vec![
                    Tone { freq_hz: 120.0, level_db: 0.0 },
                    Tone { freq_hz: 240.0, level_db: -3.0 },
                ],
            },
            duration_s,
            seed,
            level: 1.0,
            sample_rate: 16_000,
        }
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    /// Short human-readable description for manifests.
    pub fn describe(&self) -> String {
        match &self.kind {
            NoiseKind::BandpassWhite { band } => format!("bandpass-white {}-{} Hz", band.0, band.1),
            NoiseKind::ToneMix { band, tones } => {
                let mut s = String::from("tone-mix");
                if let Some(b) = band {
                    s.push_str(&format!(" band {}-{} Hz", b.0, b.1));
                }
                for t in tones {
                    s.push_str(&format!(" tone {} Hz @ {} dB", t.freq_hz, t.level_db));
                }
                s
            }
            NoiseKind::WavFile { path } => format!("wav {}", path.display()),
        }
    }
}

fn check_band(band: (f64, f64), sample_rate: u32) -> Result<()> {
    let nyquist = sample_rate as f64 / 2.0;
    if band.0 > 0.0 && band.0 < band.1 && band.1 < nyquist {
        Ok(())
    } else {
        Err(AncError::config(format!(
            "noise band ({}, {}) must lie inside (0, {nyquist})",
            band.0, band.1
        )))
    }
}

/// White Gaussian noise through the bandpass, with the filter start-up
/// transient discarded so the output is stationary from sample 0.
fn band_noise(band: (f64, f64), n: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    check_band(band, sample_rate)?;
    let bp = design_bandpass(BANDPASS_TAPS, band.0, band.1, sample_rate)?;
    let warmup = BANDPASS_TAPS - 1;
    let white: Vec<f64> = (0..n + warmup).map(|_| rng.sample(StandardNormal)).collect();
    let shaped = fir_convolve(&bp, &MonoSignal::new(white, sample_rate)?);
    Ok(shaped.samples()[warmup..].to_vec())
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

pub fn make_noise(spec: &NoiseSpec) -> Result<MonoSignal> {
    if !(spec.duration_s > 0.0) {
        return Err(AncError::config("noise duration must be positive"));
    }
    if !(spec.level >= 0.0) {
        return Err(AncError::config("noise level must be non-negative"));
    }
    let fs = spec.sample_rate;
    let n = spec.num_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut x = match &spec.kind {
        NoiseKind::BandpassWhite { band } => band_noise(*band, n, fs, &mut rng)?,
        NoiseKind::ToneMix { band, tones } => {
            let mut x = match band {
                Some(b) => band_noise(*b, n, fs, &mut rng)?,
                None => vec![0.0; n],
            };
            let reference_power = match band {
                Some(_) => rms(&x).powi(2),
                None => 1.0,
            };
            for tone in tones {
                check_band((tone.freq_hz, tone.freq_hz + 1.0), fs)?;
                let amp = (2.0 * reference_power * 10f64.powf(tone.level_db / 10.0)).sqrt();
                let phase = rng.random_range(0.0..2.0 * PI);
                let w = 2.0 * PI * tone.freq_hz / fs as f64;
                for (i, v) in x.iter_mut().enumerate() {
                    *v += amp * (w * i as f64 + phase).sin();
                }
            }
            x
        }
        NoiseKind::WavFile { path } => {
            let rec = wav::read_wav(path)?;
            if rec.sample_rate() != fs {
                return Err(AncError::input(format!(
                    "{} is sampled at {} Hz, expected {fs} Hz",
                    path.display(),
                    rec.sample_rate()
                )));
            }
            if rec.len() < n {
                return Err(AncError::input(format!(
                    "{} holds {} samples, {n} requested",
                    path.display(),
                    rec.len()
                )));
            }
            rec.samples()[..n].to_vec()
        }
    };

    let current = rms(&x);
    let gain = if spec.level == 0.0 || current == 0.0 {
        0.0
    } else {
        spec.level / current
    };
    x.iter_mut().for_each(|v| *v *= gain);
    MonoSignal::new(x, fs)
}
