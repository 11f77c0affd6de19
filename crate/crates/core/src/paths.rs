//! Primary path P, secondary path S and the estimate Ŝ used for the filtered
//! reference, plus the sample-synchronous plant that applies them.

use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AncError, Result};
use crate::signal::{dot, taps, DelayLine, FirFilter};

pub const PRIMARY_DELAY: usize = 32;
pub const SECONDARY_DELAY: usize = 16;
pub const DEFAULT_PRIMARY_LEN: usize = 256;
pub const DEFAULT_SECONDARY_LEN: usize = 128;

/// Band in which a synthesized secondary path must stay free of deep notches.
const CONTROL_BAND: (f64, f64) = (20.0, 2000.0);
const MAX_NOTCH_DB: f64 = -60.0;
const RESEED_STEP: u64 = 1 << 16;
const RESPONSE_FFT: usize = 8192;
const RESPONSE_RATE: f64 = 16_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub primary: FirFilter,
    pub secondary: FirFilter,
    pub secondary_estimate: FirFilter,
}

impl PathSet {
    pub fn new(primary: FirFilter, secondary: FirFilter, secondary_estimate: FirFilter) -> Result<Self> {
        if secondary_estimate.len() != secondary.len() {
            return Err(AncError::config(format!(
                "secondary estimate has {} taps, secondary path has {}",
                secondary_estimate.len(),
                secondary.len()
            )));
        }
        Ok(Self {
            primary,
            secondary,
            secondary_estimate,
        })
    }

    /// Loads paths from tap files. Without an estimate file Ŝ = S.
    pub fn load(primary: &Path, secondary: &Path, estimate: Option<&Path>) -> Result<Self> {
        let p = taps::read_taps(primary)?;
        let s = taps::read_taps(secondary)?;
        let s_hat = match estimate {
            Some(path) => taps::read_taps(path)?,
            None => s.clone(),
        };
        Self::new(p, s, s_hat)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        taps::write_taps(dir.join("primary.txt"), &self.primary)?;
        taps::write_taps(dir.join("secondary.txt"), &self.secondary)?;
        taps::write_taps(dir.join("secondary_estimate.txt"), &self.secondary_estimate)
    }
}

/// Pure delay followed by exponentially decaying Gaussian taps, scaled so the
/// peak of the magnitude response is 1.
fn decaying_path(rng: &mut ChaCha8Rng, len: usize, delay: usize) -> FirFilter {
    let time_constant = len as f64 / 4.0;
    let mut taps = vec![0.0; len];
    for (k, t) in taps.iter_mut().enumerate().skip(delay) {
        let z: f64 = rng.sample(StandardNormal);
        *t = z * (-((k - delay) as f64) / time_constant).exp();
    }
    let raw = FirFilter::new(taps).expect("finite taps");
    let peak = raw
        .magnitude_response(RESPONSE_FFT.max(len))
        .into_iter()
        .fold(0.0, f64::max);
    FirFilter::new(raw.taps().iter().map(|t| t / peak).collect()).expect("finite taps")
}

/// Deepest point (dB, unit-peak scale) of the response inside `band`,
/// assuming a 16 kHz sample rate.
pub fn deepest_notch_db(filter: &FirFilter, band: (f64, f64)) -> f64 {
    let n_fft = RESPONSE_FFT.max(filter.len());
    let mag = filter.magnitude_response(n_fft);
    let bin_hz = RESPONSE_RATE / n_fft as f64;
    mag.iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * bin_hz;
            f >= band.0 && f <= band.1
        })
        .map(|(_, m)| 20.0 * m.max(1e-300).log10())
        .fold(f64::INFINITY, f64::min)
}

fn effective_delay(nominal: usize, len: usize) -> usize {
    nominal.min(len / 2)
}

/// Deterministic synthetic acoustic paths. Ŝ is an exact copy of S.
///
/// Seeds whose secondary path has a notch deeper than -60 dB inside
/// 20-2000 Hz are redrawn with the seed advanced by 2^16.
pub fn synth_paths(seed: u64, primary_len: usize, secondary_len: usize) -> Result<PathSet> {
    if primary_len < 8 || secondary_len < 8 {
        return Err(AncError::config("path lengths must be at least 8 taps"));
    }
    let mut draw_seed = seed;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
        let primary = decaying_path(&mut rng, primary_len, effective_delay(PRIMARY_DELAY, primary_len));
        let secondary =
            decaying_path(&mut rng, secondary_len, effective_delay(SECONDARY_DELAY, secondary_len));
        let notch = deepest_notch_db(&secondary, CONTROL_BAND);
        if notch > MAX_NOTCH_DB {
            return PathSet::new(primary, secondary.clone(), secondary);
        }
        info!(
            "secondary path for seed {draw_seed} has a {notch:.1} dB notch in the control band, redrawing"
        );
        draw_seed = draw_seed.wrapping_add(RESEED_STEP);
    }
}

/// Replaces Ŝ with S plus Gaussian noise whose 2-norm is exactly
/// `relative_error * ‖S‖₂`.
pub fn perturb_estimate(paths: &PathSet, relative_error: f64, seed: u64) -> Result<PathSet> {
    if !(relative_error >= 0.0) {
        return Err(AncError::config("relative error must be non-negative"));
    }
    if relative_error == 0.0 {
        return Ok(paths.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = paths.secondary.taps();
    let noise: Vec<f64> = (0..s.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise_norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = relative_error * paths.secondary.norm() / noise_norm;
    let estimate = s.iter().zip(&noise).map(|(a, n)| a + scale * n).collect();
    PathSet::new(
        paths.primary.clone(),
        paths.secondary.clone(),
        FirFilter::new(estimate)?,
    )
}

/// Sample-synchronous plant: `d(n) = (P * x)(n)` and
/// `e(n) = d(n) - (S * y)(n)`, both from zero initial state.
#[derive(Debug, Clone)]
pub struct PlantSim {
    primary: FirFilter,
    secondary: FirFilter,
    primary_state: DelayLine,
    secondary_state: DelayLine,
}

impl PlantSim {
    pub fn new(paths: &PathSet) -> Self {
        Self {
            primary: paths.primary.clone(),
            secondary: paths.secondary.clone(),
            primary_state: DelayLine::new(paths.primary.len()),
            secondary_state: DelayLine::new(paths.secondary.len()),
        }
    }

    /// Disturbance at the error microphone for reference sample `x`.
    pub fn disturbance(&mut self, x: f64) -> f64 {
        self.primary_state.push(x);
        dot(self.primary.taps(), self.primary_state.contents())
    }

    /// Residual at the error microphone after the loudspeaker emits `y`.
    pub fn residual(&mut self, d: f64, y: f64) -> f64 {
        self.secondary_state.push(y);
        d - dot(self.secondary.taps(), self.secondary_state.contents())
    }
}
