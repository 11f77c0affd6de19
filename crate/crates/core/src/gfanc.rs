//! Generative fixed-filter machinery: broadband filter training, sub-band
//! decomposition, control-filter generation and weight prediction.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use rustfft::num_complex::Complex64;

use crate::error::{AncError, Result};
use crate::fxnlms::{FxNlms, DEFAULT_EPS};
use crate::noise::{make_noise, NoiseSpec};
use crate::paths::{PathSet, PlantSim};
use crate::signal::{band_energies, equal_bands, real_fft, real_ifft, taps, FirFilter, MonoSignal};

pub const DEFAULT_SUB_FILTERS: usize = 8;
pub const DEFAULT_FILTER_LEN: usize = 1024;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FRAME_LEN: usize = 16_000;
pub const FULL_BAND: (f64, f64) = (20.0, 2000.0);
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Crossfade width between neighbouring sub-bands, as a fraction of the band width.
pub const CROSSFADE_FRACTION: f64 = 0.1;

/// Combination weights, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    g: Vec<f64>,
    clamped: bool,
}

impl WeightVector {
    /// Out-of-range entries are clamped to `[0, 1]` (NaN becomes 0) with a warning.
    pub fn new(values: Vec<f64>) -> Self {
        let mut clamped = false;
        let g = values
            .into_iter()
            .map(|v| {
                let c = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                if c != v {
                    clamped = true;
                }
                c
            })
            .collect::<Vec<_>>();
        if clamped {
            warn!("weight vector entries clamped to [0, 1]");
        }
        Self { g, clamped }
    }

    pub fn zeros(m: usize) -> Self {
        Self::new(vec![0.0; m])
    }

    pub fn ones(m: usize) -> Self {
        Self::new(vec![1.0; m])
    }

    pub fn unit(m: usize, index: usize) -> Self {
        let mut v = vec![0.0; m];
        v[index] = 1.0;
        Self::new(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.g
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// Whether construction had to clamp any entry.
    pub fn was_clamped(&self) -> bool {
        self.clamped
    }
}

impl fmt::Display for WeightVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.g.iter().map(|v| format!("{v:.4}")).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// M band-limited components of one broadband control filter.
#[derive(Debug, Clone, PartialEq)]
pub struct SubFilterBank {
    filters: Vec<FirFilter>,
    band_edges: Vec<(f64, f64)>,
    source: String,
}

impl SubFilterBank {
    pub fn new(filters: Vec<FirFilter>, band_edges: Vec<(f64, f64)>, source: impl Into<String>) -> Result<Self> {
        if filters.is_empty() {
            return Err(AncError::config("sub-filter bank needs at least one filter"));
        }
        if filters.len() != band_edges.len() {
            return Err(AncError::config(format!(
                "{} sub-filters but {} bands",
                filters.len(),
                band_edges.len()
            )));
        }
        let len = filters[0].len();
        if filters.iter().any(|f| f.len() != len) {
            return Err(AncError::config("sub-filters differ in length"));
        }
        Ok(Self {
            filters,
            band_edges,
            source: source.into(),
        })
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn filter_len(&self) -> usize {
        self.filters[0].len()
    }

    pub fn filters(&self) -> &[FirFilter] {
        &self.filters
    }

    pub fn band_edges(&self) -> &[(f64, f64)] {
        &self.band_edges
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Writes `sub_filter_<m>.txt` for m = 1..=M and a `manifest.txt` with
    /// one `band=` line per sub-filter.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| AncError::io(dir, e))?;
        let mut manifest = format!("source={}\nsub_filters={}\n", self.source, self.filters.len());
        let mut written = Vec::new();
        for (m, (f, band)) in self.filters.iter().zip(&self.band_edges).enumerate() {
            let name = format!("sub_filter_{}.txt", m + 1);
            let path = dir.join(&name);
            taps::write_taps(&path, f)?;
            manifest.push_str(&format!("band={},{},{},{}\n", m + 1, band.0, band.1, name));
            written.push(path);
        }
        let mpath = dir.join("manifest.txt");
        fs::write(&mpath, manifest).map_err(|e| AncError::io(&mpath, e))?;
        written.push(mpath);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.txt");
        let text = fs::read_to_string(&mpath).map_err(|e| AncError::io(&mpath, e))?;
        let mut source = String::new();
        let mut filters = Vec::new();
        let mut bands = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(s) = line.strip_prefix("source=") {
                source = s.to_string();
            } else if let Some(rest) = line.strip_prefix("band=") {
                let fields: Vec<&str> = rest.split(',').collect();
                let bad = || AncError::format(&mpath, format!("line {}: malformed band entry", i + 1));
                if fields.len() != 4 {
                    return Err(bad());
                }
                let lo: f64 = fields[1].parse().map_err(|_| bad())?;
                let hi: f64 = fields[2].parse().map_err(|_| bad())?;
                filters.push(taps::read_taps(dir.join(fields[3]))?);
                bands.push((lo, hi));
            }
        }
        Self::new(filters, bands, source)
    }
}

/// Raised-cosine weights `(lower, upper)` at frequency `f` across an edge.
fn crossfade(f: f64, edge: f64, width: f64) -> (f64, f64) {
    let start = edge - width / 2.0;
    if f <= start {
        (1.0, 0.0)
    } else if f >= edge + width / 2.0 {
        (0.0, 1.0)
    } else {
        let phase = std::f64::consts::FRAC_PI_2 * (f - start) / width;
        let lower = phase.cos().powi(2);
        (lower, 1.0 - lower)
    }
}

/// Mask values of all M bands at frequency `f`; they always sum to 1.
pub fn band_masks_at(f: f64, bands: &[(f64, f64)], crossfade_width: f64) -> Vec<f64> {
    let m = bands.len();
    let mut masks = vec![0.0; m];
    if m == 1 {
        masks[0] = 1.0;
        return masks;
    }
    // inner edges e_1..e_{M-1}; f belongs to at most one crossfade region
    // because the width is below half a band
    let mut home = m - 1;
    for (j, band) in bands.iter().enumerate().take(m - 1) {
        if f < band.1 {
            home = j;
            break;
        }
    }
    let upper_edge = (home + 1 < m).then(|| bands[home].1);
    let lower_edge = (home > 0).then(|| bands[home].0);
    if let Some(edge) = upper_edge.filter(|e| f > e - crossfade_width / 2.0) {
        let (lo, hi) = crossfade(f, edge, crossfade_width);
        masks[home] = lo;
        masks[home + 1] = hi;
    } else if let Some(edge) = lower_edge.filter(|e| f < e + crossfade_width / 2.0) {
        let (lo, hi) = crossfade(f, edge, crossfade_width);
        masks[home - 1] = lo;
        masks[home] = hi;
    } else {
        masks[home] = 1.0;
    }
    masks
}

/// Splits `broadband` into `m` sub-filters over equal-width bands of
/// `full_band`. Sub-filter m is the inverse DFT of the broadband spectrum
/// times mask m; the masks are non-negative and sum to one on every bin, so
/// the sub-filters add back up to the broadband filter.
pub fn decompose(broadband: &FirFilter, m: usize, full_band: (f64, f64), sample_rate: u32) -> Result<SubFilterBank> {
    if m == 0 {
        return Err(AncError::config("number of sub-filters must be at least 1"));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if !(full_band.0 > 0.0 && full_band.0 < full_band.1 && full_band.1 < nyquist) {
        return Err(AncError::config(format!(
            "full band ({}, {}) must lie inside (0, {nyquist})",
            full_band.0, full_band.1
        )));
    }
    let bands = equal_bands(full_band.0, full_band.1, m);
    if m == 1 {
        // mask ≡ 1; skip the FFT round trip so the filter is reproduced bit for bit
        return SubFilterBank::new(vec![broadband.clone()], bands, "broadband");
    }
    let width = CROSSFADE_FRACTION * (full_band.1 - full_band.0) / m as f64;
    let n = broadband.len();
    let spectrum = real_fft(broadband.taps(), n);

    let mut masked: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n]; m];
    for (k, value) in spectrum.iter().enumerate() {
        // same mask on bin k and its mirror keeps every sub-filter real
        let f = k.min(n - k) as f64 * sample_rate as f64 / n as f64;
        for (band, mask) in band_masks_at(f, &bands, width).into_iter().enumerate() {
            masked[band][k] = value * mask;
        }
    }
    let filters = masked
        .into_iter()
        .map(|spec| FirFilter::new(real_ifft(spec)))
        .collect::<Result<Vec<_>>>()?;
    SubFilterBank::new(filters, bands, "broadband")
}

/// `Σ_m g_m · f_m`.
pub fn generate_control_filter(g: &WeightVector, bank: &SubFilterBank) -> Result<FirFilter> {
    if g.len() != bank.num_filters() {
        return Err(AncError::config(format!(
            "weight vector has {} elements, bank has {} sub-filters",
            g.len(),
            bank.num_filters()
        )));
    }
    let mut w = vec![0.0; bank.filter_len()];
    for (&gm, f) in g.values().iter().zip(bank.filters()) {
        if gm == 0.0 {
            continue;
        }
        for (acc, &t) in w.iter_mut().zip(f.taps()) {
            *acc += gm * t;
        }
    }
    FirFilter::new(w)
}

/// Frame-rate weight predictor.
pub trait WeightPredictor: Send {
    fn predict(&mut self, frame: &MonoSignal) -> Result<WeightVector>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictorKind {
    BandEnergy,
    Replay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub band_edges: Vec<(f64, f64)>,
    pub soft: bool,
    pub threshold: f64,
    pub replay_path: Option<PathBuf>,
    /// Samples per prediction frame.
    pub frame_len: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::BandEnergy,
            band_edges: equal_bands(FULL_BAND.0, FULL_BAND.1, DEFAULT_SUB_FILTERS),
            soft: false,
            threshold: DEFAULT_THRESHOLD,
            replay_path: None,
            frame_len: DEFAULT_FRAME_LEN,
        }
    }
}

impl PredictorConfig {
    pub fn band_energy(band_edges: Vec<(f64, f64)>, soft: bool, threshold: f64) -> Self {
        Self {
            band_edges,
            soft,
            threshold,
            ..Self::default()
        }
    }

    pub fn replay(path: impl Into<PathBuf>, m: usize) -> Self {
        Self {
            kind: PredictorKind::Replay,
            band_edges: equal_bands(FULL_BAND.0, FULL_BAND.1, m),
            replay_path: Some(path.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.band_edges.is_empty() {
            return Err(AncError::config("predictor needs at least one band"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(AncError::config(format!(
                "predictor threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.kind == PredictorKind::Replay && self.replay_path.is_none() {
            return Err(AncError::config("replay predictor requires a replay file"));
        }
        if self.frame_len < 2 {
            return Err(AncError::config("frame length must be at least 2"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn WeightPredictor>> {
        self.validate()?;
        Ok(match self.kind {
            PredictorKind::BandEnergy => Box::new(BandEnergyPredictor::new(self.clone())?),
            PredictorKind::Replay => Box::new(ReplayPredictor::from_file(
                self.replay_path.as_ref().expect("validated"),
                self.band_edges.len(),
                self.frame_len,
            )?),
        })
    }
}

fn check_frame(frame: &MonoSignal, frame_len: usize) -> Result<()> {
    if frame.len() != frame_len {
        return Err(AncError::input(format!(
            "prediction frame has {} samples, expected {frame_len}",
            frame.len()
        )));
    }
    Ok(())
}

/// Band-energy stand-in for a learned predictor: band energies normalized by
/// the strongest band, then thresholded (hard) or used directly (soft).
#[derive(Debug, Clone)]
pub struct BandEnergyPredictor {
    cfg: PredictorConfig,
}

impl BandEnergyPredictor {
    pub fn new(cfg: PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }
}

/// Normalized band energies of `frame`; all zero for a silent frame.
pub fn normalized_band_energies(frame: &MonoSignal, bands: &[(f64, f64)]) -> Result<Vec<f64>> {
    let e = band_energies(frame, bands)?;
    let peak = e.iter().cloned().fold(0.0, f64::max);
    Ok(if peak > 0.0 {
        e.iter().map(|v| v / peak).collect()
    } else {
        vec![0.0; e.len()]
    })
}

/// Hard activity pattern: bands whose normalized energy reaches `threshold`.
pub fn active_bands(frame: &MonoSignal, bands: &[(f64, f64)], threshold: f64) -> Result<Vec<bool>> {
    let norm = normalized_band_energies(frame, bands)?;
    let any = norm.iter().any(|&v| v > 0.0);
    Ok(norm.iter().map(|&v| any && v >= threshold).collect())
}

impl WeightPredictor for BandEnergyPredictor {
    fn predict(&mut self, frame: &MonoSignal) -> Result<WeightVector> {
        check_frame(frame, self.cfg.frame_len)?;
        if self.cfg.soft {
            Ok(WeightVector::new(normalized_band_energies(frame, &self.cfg.band_edges)?))
        } else {
            let active = active_bands(frame, &self.cfg.band_edges, self.cfg.threshold)?;
            Ok(WeightVector::new(active.into_iter().map(|a| if a { 1.0 } else { 0.0 }).collect()))
        }
    }
}

/// Replays externally produced weight vectors, one per frame.
#[derive(Debug, Clone)]
pub struct ReplayPredictor {
    vectors: Vec<Vec<f64>>,
    cursor: usize,
    frame_len: usize,
}

impl ReplayPredictor {
    pub fn new(vectors: Vec<Vec<f64>>, frame_len: usize) -> Self {
        Self {
            vectors,
            cursor: 0,
            frame_len,
        }
    }

    /// CSV, one vector per line, `m` comma-separated decimals.
    pub fn from_file(path: &Path, m: usize, frame_len: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AncError::io(path, e))?;
        let mut vectors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| AncError::format(path, format!("line {}: non-numeric weight", i + 1)))?;
            if v.len() != m {
                return Err(AncError::format(
                    path,
                    format!("line {}: {} weights, expected {m}", i + 1, v.len()),
                ));
            }
            vectors.push(v);
        }
        Ok(Self::new(vectors, frame_len))
    }

    pub fn remaining(&self) -> usize {
        self.vectors.len() - self.cursor
    }
}

impl WeightPredictor for ReplayPredictor {
    fn predict(&mut self, frame: &MonoSignal) -> Result<WeightVector> {
        check_frame(frame, self.frame_len)?;
        let v = self.vectors.get(self.cursor).ok_or_else(|| {
            AncError::input(format!("replay file exhausted after {} vectors", self.vectors.len()))
        })?;
        self.cursor += 1;
        Ok(WeightVector::new(v.clone()))
    }
}

/// Weight prediction for one frame with a fresh predictor built from `cfg`.
pub fn predict_weights(frame: &MonoSignal, cfg: &PredictorConfig) -> Result<WeightVector> {
    cfg.build()?.predict(frame)
}

/// Recipe for pre-training a control filter with FxNLMS on band noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub filter_len: usize,
    pub sample_rate: u32,
    pub mu0: f64,
    pub eps: f64,
    pub duration_s: f64,
}

pub const MIN_TRAIN_DURATION_S: f64 = 5.0;
pub const DEFAULT_TRAIN_DURATION_S: f64 = 60.0;
/// Pre-training step size. Larger than the run-time default so that a minute
/// of offline training gets much closer to convergence; still stable on
/// narrow training bands.
pub const DEFAULT_TRAIN_MU0: f64 = 0.02;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            filter_len: DEFAULT_FILTER_LEN,
            sample_rate: DEFAULT_SAMPLE_RATE,
            mu0: DEFAULT_TRAIN_MU0,
            eps: DEFAULT_EPS,
            duration_s: DEFAULT_TRAIN_DURATION_S,
        }
    }
}

/// Adapts a zero-initialized filter on white noise band-limited to `band`
/// and returns the final taps.
pub fn train_control_filter(paths: &PathSet, band: (f64, f64), seed: u64, cfg: &TrainConfig) -> Result<FirFilter> {
    if !(cfg.duration_s >= MIN_TRAIN_DURATION_S) {
        return Err(AncError::config(format!(
            "training needs at least {MIN_TRAIN_DURATION_S} s of noise, got {}",
            cfg.duration_s
        )));
    }
    if cfg.filter_len == 0 {
        return Err(AncError::config("filter length must be positive"));
    }
    let mut spec = NoiseSpec::bandpass(band, cfg.duration_s, seed);
    spec.sample_rate = cfg.sample_rate;
    let x = make_noise(&spec)?;
    let mut engine = FxNlms::new(FirFilter::zeros(cfg.filter_len), cfg.mu0, cfg.eps, &paths.secondary_estimate)?;
    let mut plant = PlantSim::new(paths);
    for &xn in x.samples() {
        let d = plant.disturbance(xn);
        let y = engine.output(xn);
        let e = plant.residual(d, y);
        engine.adapt(e)?;
    }
    Ok(engine.filter())
}

/// Noise reduction in dB, `10·log10(Σd² / Σe²)`, of a fixed control filter
/// over the whole of `noise`.
pub fn evaluate_fixed_filter(paths: &PathSet, filter: &FirFilter, noise: &MonoSignal) -> f64 {
    let mut plant = PlantSim::new(paths);
    let mut line = crate::signal::DelayLine::new(filter.len());
    let (mut sd, mut se) = (0.0, 0.0);
    for &xn in noise.samples() {
        let d = plant.disturbance(xn);
        line.push(xn);
        let y = crate::signal::dot(filter.taps(), line.contents());
        let e = plant.residual(d, y);
        sd += d * d;
        se += e * e;
    }
    10.0 * (sd.max(1e-300) / se.max(1e-300)).log10()
}

/// Broadband (20-2000 Hz) filter with default length and sample rate.
pub fn train_broadband_filter(paths: &PathSet, seed: u64, duration_s: f64, mu0: f64) -> Result<FirFilter> {
    let cfg = TrainConfig {
        mu0,
        duration_s,
        ..TrainConfig::default()
    };
    train_control_filter(paths, FULL_BAND, seed, &cfg)
}
