//! End-to-end control loops against the simulated plant.
//!
//! All five algorithms share one dual-rate loop: every sample goes through
//! the plant and the FxNLMS engine; after the last sample of each frame a
//! frame-rate decider may hand back a new control filter, which is installed
//! at the first sample of the next frame (plus an optional extra latency).

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::clustering::{ClusterEvent, ClusterState, CLUSTER_LOG_HEADER, DEFAULT_TAU};
use crate::error::{AncError, Result};
use crate::fxnlms::{FxNlms, DEFAULT_EPS, DEFAULT_MU0};
use crate::gfanc::{
    active_bands, generate_control_filter, train_control_filter, PredictorConfig, SubFilterBank, TrainConfig,
    WeightPredictor, WeightVector, DEFAULT_FILTER_LEN, DEFAULT_FRAME_LEN, DEFAULT_SAMPLE_RATE, DEFAULT_SUB_FILTERS,
};
use crate::paths::{PathSet, PlantSim};
use crate::signal::{FirFilter, MonoSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    FxNlms,
    Gfanc,
    Sfanc,
    SfancFxNlms,
    GfancFxNlms,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::FxNlms,
        Algorithm::Gfanc,
        Algorithm::Sfanc,
        Algorithm::SfancFxNlms,
        Algorithm::GfancFxNlms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FxNlms => "fxnlms",
            Algorithm::Gfanc => "gfanc",
            Algorithm::Sfanc => "sfanc",
            Algorithm::SfancFxNlms => "sfanc-fxnlms",
            Algorithm::GfancFxNlms => "gfanc-fxnlms",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = AncError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                AncError::config(format!("unknown algorithm '{s}', expected one of {}", valid.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub frame_len: usize,
    pub sub_filters: usize,
    pub filter_len: usize,
    pub sample_rate: u32,
    pub tau: f64,
    pub mu0: f64,
    pub eps: f64,
    pub clustering_enabled: bool,
    pub adaptation_enabled: bool,
    pub predictor: PredictorConfig,
    /// Extra samples between a frame boundary and the moment its decision
    /// takes effect. Must be shorter than a frame.
    pub extra_latency: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            frame_len: DEFAULT_FRAME_LEN,
            sub_filters: DEFAULT_SUB_FILTERS,
            filter_len: DEFAULT_FILTER_LEN,
            sample_rate: DEFAULT_SAMPLE_RATE,
            tau: DEFAULT_TAU,
            mu0: DEFAULT_MU0,
            eps: DEFAULT_EPS,
            clustering_enabled: true,
            adaptation_enabled: true,
            predictor: PredictorConfig::default(),
            extra_latency: 0,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len == 0 || self.filter_len == 0 || self.sub_filters == 0 || self.sample_rate == 0 {
            return Err(AncError::config("frame length, filter length, sub-filter count and sample rate must be positive"));
        }
        if self.filter_len > self.frame_len {
            return Err(AncError::config(format!(
                "filter length {} exceeds frame length {}",
                self.filter_len, self.frame_len
            )));
        }
        if self.extra_latency >= self.frame_len {
            return Err(AncError::config("extra latency must be shorter than a frame"));
        }
        if self.predictor.frame_len != self.frame_len {
            return Err(AncError::config(format!(
                "predictor expects {}-sample frames, controller uses {}",
                self.predictor.frame_len, self.frame_len
            )));
        }
        if self.predictor.band_edges.len() != self.sub_filters {
            return Err(AncError::config(format!(
                "predictor has {} bands, controller has {} sub-filters",
                self.predictor.band_edges.len(),
                self.sub_filters
            )));
        }
        self.predictor.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    WeightUpdate,
    Reinit,
    NewCluster,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::WeightUpdate => "weight_update",
            EventKind::Reinit => "reinit",
            EventKind::NewCluster => "new_cluster",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub sample: usize,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub error: MonoSignal,
    pub desired: MonoSignal,
    pub events: Vec<Event>,
    pub reinit_count: usize,
    pub cluster_log: Vec<ClusterEvent>,
    /// Control filter in effect at the first sample of each frame.
    pub frame_start_filters: Vec<FirFilter>,
    /// Control filter after the last sample of each complete frame.
    pub frame_end_filters: Vec<FirFilter>,
    pub final_filter: FirFilter,
}

pub const TRACE_HEADER: &str = "sample,desired,error";
pub const EVENTS_HEADER: &str = "sample,kind,detail";

impl RunTrace {
    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.error.len() * 48);
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for (n, (d, e)) in self.desired.samples().iter().zip(self.error.samples()).enumerate() {
            out.push_str(&format!("{n},{d:?},{e:?}\n"));
        }
        write_file(path, out.as_bytes())
    }

    pub fn write_events_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(EVENTS_HEADER);
        out.push('\n');
        for ev in &self.events {
            // detail never contains commas; vectors are space separated
            out.push_str(&format!("{},{},{}\n", ev.sample, ev.kind.name(), ev.detail.replace(',', ";")));
        }
        write_file(path, out.as_bytes())
    }
}

impl RunTrace {
    /// One row per frame decision of the clustering gate (empty body when the
    /// gate is off).
    pub fn write_cluster_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(CLUSTER_LOG_HEADER);
        out.push('\n');
        for ev in &self.cluster_log {
            out.push_str(&ev.csv_row());
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| AncError::io(path, e))?;
    f.write_all(bytes).map_err(|e| AncError::io(path, e))
}

/// What a frame-rate decision hands back to the sample loop.
struct Decision {
    filter: Option<FirFilter>,
    events: Vec<(EventKind, String)>,
    cluster: Option<ClusterEvent>,
}

trait FrameDecider {
    fn decide(&mut self, frame_index: usize, frame: &MonoSignal) -> Result<Decision>;
}

/// Predictor + optional clustering gate + generation from the sub-filter bank.
struct GenerativeDecider<'a> {
    predictor: &'a mut dyn WeightPredictor,
    bank: &'a SubFilterBank,
    clusters: Option<ClusterState>,
    g: WeightVector,
}

impl FrameDecider for GenerativeDecider<'_> {
    fn decide(&mut self, frame_index: usize, frame: &MonoSignal) -> Result<Decision> {
        let g_prime = self.predictor.predict(frame)?;
        if g_prime.len() != self.bank.num_filters() {
            return Err(AncError::config(format!(
                "predictor produced {} weights for {} sub-filters",
                g_prime.len(),
                self.bank.num_filters()
            )));
        }
        let mut events = Vec::new();
        let mut cluster = None;
        let updated = match self.clusters.as_mut() {
            Some(state) => {
                let (g_new, updated, a) = state.gated_update(&self.g, &g_prime)?;
                if a.new_cluster {
                    events.push((EventKind::NewCluster, format!("k={} K={}", a.k_prime, a.clusters)));
                }
                cluster = Some(ClusterEvent { frame_index, assignment: a, updated });
                self.g = g_new;
                updated
            }
            None => {
                let changed = g_prime != self.g;
                if changed {
                    self.g = g_prime.clone();
                }
                changed
            }
        };
        let filter = if updated {
            events.push((EventKind::WeightUpdate, format!("g={}", self.g)));
            Some(generate_control_filter(&self.g, self.bank)?)
        } else {
            None
        };
        Ok(Decision { filter, events, cluster })
    }
}

/// Pre-trained SFANC filter and the band it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SfancEntry {
    pub filter: FirFilter,
    pub band: (f64, f64),
}

pub type SfancBank = Vec<SfancEntry>;

/// Training bands of the selective fixed-filter baseline.
pub const SFANC_RANGES: [(f64, f64); 7] = [
    (20.0, 2000.0),
    (20.0, 1010.0),
    (1010.0, 2000.0),
    (20.0, 515.0),
    (515.0, 1010.0),
    (1010.0, 1505.0),
    (1505.0, 2000.0),
];

/// Trains one filter per SFANC range; entry `i` uses noise seed `seed + i`.
pub fn build_sfanc_bank(paths: &PathSet, seed: u64, cfg: &TrainConfig) -> Result<SfancBank> {
    SFANC_RANGES
        .par_iter()
        .enumerate()
        .map(|(i, &band)| {
            let filter = train_control_filter(paths, band, seed.wrapping_add(i as u64), cfg)?;
            Ok(SfancEntry { filter, band })
        })
        .collect()
}

/// Index of the narrowest bank entry whose band covers `[span.0, span.1]`;
/// ties go to the lower index.
pub fn select_covering(bank: &[SfancEntry], span: (f64, f64)) -> Option<usize> {
    const SLACK: f64 = 1e-9;
    bank.iter()
        .enumerate()
        .filter(|(_, e)| e.band.0 <= span.0 + SLACK && e.band.1 >= span.1 - SLACK)
        .min_by(|(ia, a), (ib, b)| {
            let wa = a.band.1 - a.band.0;
            let wb = b.band.1 - b.band.0;
            wa.partial_cmp(&wb).unwrap().then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
}

/// Frequency span of the active predictor bands of `frame`.
pub fn active_span(frame: &MonoSignal, predictor: &PredictorConfig) -> Result<Option<(f64, f64)>> {
    let active = active_bands(frame, &predictor.band_edges, predictor.threshold)?;
    let first = active.iter().position(|&a| a);
    let last = active.iter().rposition(|&a| a);
    Ok(match (first, last) {
        (Some(f), Some(l)) => Some((predictor.band_edges[f].0, predictor.band_edges[l].1)),
        _ => None,
    })
}

struct SelectiveDecider<'a> {
    bank: &'a [SfancEntry],
    predictor: &'a PredictorConfig,
    selected: Option<usize>,
}

impl FrameDecider for SelectiveDecider<'_> {
    fn decide(&mut self, _frame_index: usize, frame: &MonoSignal) -> Result<Decision> {
        if frame.len() != self.predictor.frame_len {
            return Err(AncError::input(format!(
                "selection frame has {} samples, expected {}",
                frame.len(),
                self.predictor.frame_len
            )));
        }
        let choice = active_span(frame, self.predictor)?.and_then(|span| select_covering(self.bank, span));
        match choice {
            Some(i) if Some(i) != self.selected => {
                self.selected = Some(i);
                let band = self.bank[i].band;
                Ok(Decision {
                    filter: Some(self.bank[i].filter.clone()),
                    events: vec![(EventKind::WeightUpdate, format!("filter={} band={}-{} Hz", i, band.0, band.1))],
                    cluster: None,
                })
            }
            _ => Ok(Decision {
                filter: None,
                events: Vec::new(),
                cluster: None,
            }),
        }
    }
}

fn run_loop(
    noise: &MonoSignal,
    paths: &PathSet,
    cfg: &HybridConfig,
    w0: FirFilter,
    mut decider: Option<&mut dyn FrameDecider>,
) -> Result<RunTrace> {
    cfg.validate()?;
    if noise.sample_rate() != cfg.sample_rate {
        return Err(AncError::config(format!(
            "noise sampled at {} Hz, controller configured for {} Hz",
            noise.sample_rate(),
            cfg.sample_rate
        )));
    }
    if decider.is_some() && noise.len() < cfg.frame_len {
        return Err(AncError::input(format!(
            "noise has {} samples, at least one {}-sample frame is needed",
            noise.len(),
            cfg.frame_len
        )));
    }
    let mut engine = FxNlms::with_len(w0, cfg.filter_len, cfg.mu0, cfg.eps, &paths.secondary_estimate)?;
    let mut plant = PlantSim::new(paths);
    let x = noise.samples();
    let frame_len = cfg.frame_len;

    let mut desired = Vec::with_capacity(x.len());
    let mut error = Vec::with_capacity(x.len());
    let mut events = Vec::new();
    let mut cluster_log = Vec::new();
    let mut frame_start_filters = Vec::new();
    let mut frame_end_filters = Vec::new();
    let mut pending: VecDeque<(usize, FirFilter)> = VecDeque::new();

    let install = |engine: &mut FxNlms, at: usize, filter: &FirFilter, events: &mut Vec<Event>| -> Result<()> {
        engine.reinitialize(filter)?;
        events.push(Event {
            sample: at,
            kind: EventKind::Reinit,
            detail: format!("reinit #{}", engine.reinit_count()),
        });
        Ok(())
    };

    for (n, &xn) in x.iter().enumerate() {
        while pending.front().is_some_and(|(at, _)| *at == n) {
            let (at, filter) = pending.pop_front().expect("checked");
            install(&mut engine, at, &filter, &mut events)?;
        }
        if n % frame_len == 0 {
            frame_start_filters.push(engine.filter());
        }

        let d = plant.disturbance(xn);
        let y = engine.output(xn);
        let e = plant.residual(d, y);
        if cfg.adaptation_enabled {
            engine.adapt(e)?;
        }
        desired.push(d);
        error.push(e);

        if (n + 1) % frame_len == 0 {
            frame_end_filters.push(engine.filter());
            if let Some(decider) = decider.as_deref_mut() {
                let frame_index = n / frame_len;
                let boundary = n + 1;
                let frame = noise.slice(boundary - frame_len, boundary);
                let decision = decider.decide(frame_index, &frame)?;
                for (kind, detail) in decision.events {
                    events.push(Event { sample: boundary, kind, detail });
                }
                cluster_log.extend(decision.cluster);
                if let Some(filter) = decision.filter {
                    pending.push_back((boundary + cfg.extra_latency, filter));
                }
            }
        }
    }
    // decisions scheduled past the end still count as re-initializations
    while let Some((at, filter)) = pending.pop_front() {
        install(&mut engine, at, &filter, &mut events)?;
    }

    let reinit_count = engine.reinit_count();
    Ok(RunTrace {
        error: MonoSignal::new(error, noise.sample_rate())?,
        desired: MonoSignal::new(desired, noise.sample_rate())?,
        events,
        reinit_count,
        cluster_log,
        frame_start_filters,
        frame_end_filters,
        final_filter: engine.filter(),
    })
}

fn check_bank(bank: &SubFilterBank, cfg: &HybridConfig) -> Result<()> {
    if bank.num_filters() != cfg.sub_filters || bank.filter_len() != cfg.filter_len {
        return Err(AncError::config(format!(
            "bank is {}x{}, controller expects {}x{}",
            bank.num_filters(),
            bank.filter_len(),
            cfg.sub_filters,
            cfg.filter_len
        )));
    }
    Ok(())
}

/// Hybrid loop with an explicit predictor. The initial weight vector is zero,
/// so frame 0 runs with a zero control filter.
pub fn run_hybrid_with(
    noise: &MonoSignal,
    paths: &PathSet,
    bank: &SubFilterBank,
    cfg: &HybridConfig,
    predictor: &mut dyn WeightPredictor,
) -> Result<RunTrace> {
    cfg.validate()?;
    check_bank(bank, cfg)?;
    let clusters = if cfg.clustering_enabled {
        Some(ClusterState::new(cfg.tau)?)
    } else {
        None
    };
    let g0 = WeightVector::zeros(cfg.sub_filters);
    let w0 = generate_control_filter(&g0, bank)?;
    let mut decider = GenerativeDecider {
        predictor,
        bank,
        clusters,
        g: g0,
    };
    run_loop(noise, paths, cfg, w0, Some(&mut decider))
}

/// Hybrid loop with the predictor described by `cfg.predictor`.
pub fn run_hybrid(noise: &MonoSignal, paths: &PathSet, bank: &SubFilterBank, cfg: &HybridConfig) -> Result<RunTrace> {
    let mut predictor = cfg.predictor.build()?;
    run_hybrid_with(noise, paths, bank, cfg, predictor.as_mut())
}

/// Generated filter held fixed per frame (no sample-rate adaptation).
pub fn run_gfanc(noise: &MonoSignal, paths: &PathSet, bank: &SubFilterBank, cfg: &HybridConfig) -> Result<RunTrace> {
    let cfg = HybridConfig {
        adaptation_enabled: false,
        ..cfg.clone()
    };
    run_hybrid(noise, paths, bank, &cfg)
}

pub fn run_gfanc_with(
    noise: &MonoSignal,
    paths: &PathSet,
    bank: &SubFilterBank,
    cfg: &HybridConfig,
    predictor: &mut dyn WeightPredictor,
) -> Result<RunTrace> {
    let cfg = HybridConfig {
        adaptation_enabled: false,
        ..cfg.clone()
    };
    run_hybrid_with(noise, paths, bank, &cfg, predictor)
}

/// Zero-initialized FxNLMS without any frame-rate decisions.
pub fn run_fxnlms(noise: &MonoSignal, paths: &PathSet, cfg: &HybridConfig) -> Result<RunTrace> {
    let cfg = HybridConfig {
        adaptation_enabled: true,
        ..cfg.clone()
    };
    run_loop(noise, paths, &cfg, FirFilter::zeros(cfg.filter_len), None)
}

/// FxNLMS started from `w0`, no frame-rate decisions.
pub fn run_fxnlms_from(noise: &MonoSignal, paths: &PathSet, cfg: &HybridConfig, w0: FirFilter) -> Result<RunTrace> {
    let cfg = HybridConfig {
        adaptation_enabled: true,
        ..cfg.clone()
    };
    run_loop(noise, paths, &cfg, w0, None)
}

fn run_selective(
    noise: &MonoSignal,
    paths: &PathSet,
    bank: &[SfancEntry],
    cfg: &HybridConfig,
    adapt: bool,
) -> Result<RunTrace> {
    if let Some(e) = bank.iter().find(|e| e.filter.len() != cfg.filter_len) {
        return Err(AncError::config(format!(
            "SFANC filter has {} taps, controller expects {}",
            e.filter.len(),
            cfg.filter_len
        )));
    }
    let cfg = HybridConfig {
        adaptation_enabled: adapt,
        ..cfg.clone()
    };
    let mut decider = SelectiveDecider {
        bank,
        predictor: &cfg.predictor,
        selected: None,
    };
    run_loop(noise, paths, &cfg, FirFilter::zeros(cfg.filter_len), Some(&mut decider))
}

/// Selected pre-trained filter held fixed per frame.
pub fn run_sfanc(noise: &MonoSignal, paths: &PathSet, bank: &[SfancEntry], cfg: &HybridConfig) -> Result<RunTrace> {
    run_selective(noise, paths, bank, cfg, false)
}

/// Selected filter refined by FxNLMS; re-initialized only when the selection changes.
pub fn run_sfanc_fxnlms(noise: &MonoSignal, paths: &PathSet, bank: &[SfancEntry], cfg: &HybridConfig) -> Result<RunTrace> {
    run_selective(noise, paths, bank, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfanc::{decompose, BandEnergyPredictor, ReplayPredictor, FULL_BAND};
    use crate::noise::{make_noise, NoiseSpec};
    use crate::paths::synth_paths;
    use crate::signal::equal_bands;

    const FS: u32 = 16_000;
    const FRAME: usize = 1600;
    const L: usize = 128;

    fn small_cfg() -> HybridConfig {
        let mut cfg = HybridConfig {
            frame_len: FRAME,
            filter_len: L,
            mu0: 0.05,
            ..HybridConfig::default()
        };
        cfg.predictor.frame_len = FRAME;
        cfg
    }

    fn small_setup() -> (PathSet, SubFilterBank) {
        let paths = synth_paths(4, 64, 32).unwrap();
        let broadband = FirFilter::new((0..L).map(|k| ((k as f64) * 0.37).sin() * (-(k as f64) / 30.0).exp()).collect()).unwrap();
        let bank = decompose(&broadband, 8, FULL_BAND, FS).unwrap();
        (paths, bank)
    }

    fn noise(seconds: f64, seed: u64) -> MonoSignal {
        make_noise(&NoiseSpec::bandpass((100.0, 1200.0), seconds, seed)).unwrap()
    }

    struct Constant(WeightVector);
    impl WeightPredictor for Constant {
        fn predict(&mut self, _frame: &MonoSignal) -> Result<WeightVector> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        let err = "lms".parse::<Algorithm>().unwrap_err().to_string();
        assert!(err.contains("gfanc-fxnlms"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        assert!(cfg.validate().is_ok());
        cfg.filter_len = FRAME + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.predictor.frame_len = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.extra_latency = FRAME;
        assert!(cfg.validate().is_err());
        assert!(HybridConfig::default().validate().is_ok());
    }

    #[test]
    fn gfanc_without_gate_holds_generated_filter_per_frame() {
        let (paths, bank) = small_setup();
        let x = noise(1.0, 1);
        let vectors: Vec<Vec<f64>> = (0..10)
            .map(|i| (0..8).map(|m| if (m + i) % 3 == 0 { 1.0 } else { 0.25 * (i % 2) as f64 }).collect())
            .collect();
        let mut replay = ReplayPredictor::new(vectors.clone(), FRAME);
        let mut cfg = small_cfg();
        cfg.clustering_enabled = false;
        let trace = run_gfanc_with(&x, &paths, &bank, &cfg, &mut replay).unwrap();

        // frame 0 runs with the zero filter; frame i+1 with the filter of prediction i
        assert!(trace.frame_start_filters[0].taps().iter().all(|&t| t == 0.0));
        for i in 0..9 {
            let expected = generate_control_filter(&WeightVector::new(vectors[i].clone()), &bank).unwrap();
            assert_eq!(trace.frame_start_filters[i + 1], expected);
        }
        for (s, e) in trace.frame_start_filters.iter().zip(&trace.frame_end_filters) {
            assert_eq!(s, e);
        }
        let distinct = vectors.windows(2).filter(|w| w[0] != w[1]).count() + 1;
        assert_eq!(trace.reinit_count, distinct);
    }

    #[test]
    fn constant_predictions_reinitialize_once_with_clustering() {
        let (paths, bank) = small_setup();
        let x = noise(1.0, 2);
        let mut p = Constant(WeightVector::new(vec![1.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0]));
        let trace = run_hybrid_with(&x, &paths, &bank, &small_cfg(), &mut p).unwrap();
        assert_eq!(trace.reinit_count, 1);
        assert_eq!(trace.events_of(EventKind::Reinit).count(), 1);
        assert_eq!(trace.events_of(EventKind::NewCluster).count(), 1);
        assert_eq!(trace.cluster_log.len(), 10);
    }

    #[test]
    fn events_only_at_frame_boundaries() {
        let (paths, bank) = small_setup();
        let x = noise(1.0, 3);
        let mut cfg = small_cfg();
        cfg.clustering_enabled = false;
        let mut p = ReplayPredictor::new((0..10).map(|i| vec![(i % 2) as f64; 8]).collect(), FRAME);
        let trace = run_hybrid_with(&x, &paths, &bank, &cfg, &mut p).unwrap();
        assert!(trace.reinit_count >= 5);
        assert!(trace.events.iter().all(|e| e.sample % FRAME == 0 && e.sample > 0));
    }

    #[test]
    fn extra_latency_delays_installation() {
        let (paths, bank) = small_setup();
        let x = noise(0.5, 4);
        let mut cfg = small_cfg();
        cfg.extra_latency = 37;
        let mut p = Constant(WeightVector::ones(8));
        let trace = run_hybrid_with(&x, &paths, &bank, &cfg, &mut p).unwrap();
        let reinit: Vec<usize> = trace.events_of(EventKind::Reinit).map(|e| e.sample).collect();
        assert_eq!(reinit, vec![FRAME + 37]);
    }

    #[test]
    fn constant_stream_matches_fxnlms_started_from_generated_filter() {
        let (paths, bank) = small_setup();
        let x = noise(1.0, 5);
        let g = WeightVector::new(vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let cfg = small_cfg();
        let hybrid = run_hybrid_with(&x, &paths, &bank, &cfg, &mut Constant(g.clone())).unwrap();

        // replay frame 0 with zero filter, then continue from the generated filter
        let mut engine = FxNlms::new(FirFilter::zeros(L), cfg.mu0, cfg.eps, &paths.secondary_estimate).unwrap();
        let mut plant = PlantSim::new(&paths);
        let generated = generate_control_filter(&g, &bank).unwrap();
        for (n, &xn) in x.samples().iter().enumerate() {
            if n == FRAME {
                engine.reinitialize(&generated).unwrap();
            }
            let d = plant.disturbance(xn);
            let y = engine.output(xn);
            let e = plant.residual(d, y);
            engine.adapt(e).unwrap();
            assert_eq!(e, hybrid.error.samples()[n], "sample {n}");
        }
    }

    #[test]
    fn silence_produces_zero_error_and_no_late_reinit() {
        let (paths, bank) = small_setup();
        let x = MonoSignal::zeros(FRAME * 5, FS);
        for clustering in [true, false] {
            let mut cfg = small_cfg();
            cfg.clustering_enabled = clustering;
            let trace = run_gfanc(&x, &paths, &bank, &cfg).unwrap();
            assert!(trace.error.samples().iter().all(|&e| e == 0.0));
            assert!(trace.events_of(EventKind::Reinit).all(|e| e.sample <= FRAME));
            assert!(trace.final_filter.taps().iter().all(|&t| t == 0.0));
            let trace = run_hybrid(&x, &paths, &bank, &cfg).unwrap();
            assert!(trace.error.samples().iter().all(|&e| e == 0.0));
        }
    }

    #[test]
    fn fxnlms_zero_noise_and_determinism() {
        let (paths, _) = small_setup();
        let cfg = small_cfg();
        let silent = run_fxnlms(&MonoSignal::zeros(4000, FS), &paths, &cfg).unwrap();
        assert!(silent.error.samples().iter().all(|&e| e == 0.0));
        let x = noise(0.5, 6);
        assert_eq!(run_fxnlms(&x, &paths, &cfg).unwrap(), run_fxnlms(&x, &paths, &cfg).unwrap());
        assert_eq!(run_fxnlms(&x, &paths, &cfg).unwrap().reinit_count, 0);
    }

    #[test]
    fn short_noise_and_mismatched_bank_are_rejected() {
        let (paths, bank) = small_setup();
        let cfg = small_cfg();
        assert!(matches!(
            run_hybrid(&MonoSignal::zeros(FRAME - 1, FS), &paths, &bank, &cfg),
            Err(AncError::Input(_))
        ));
        let mut wrong = cfg.clone();
        wrong.filter_len = 64;
        assert!(run_hybrid(&noise(0.2, 1), &paths, &bank, &wrong).is_err());
    }

    #[test]
    fn divergence_surfaces_with_sample_index() {
        let (paths, _) = small_setup();
        let mut cfg = small_cfg();
        cfg.mu0 = 10.0;
        match run_fxnlms(&noise(1.0, 7), &paths, &cfg) {
            Err(AncError::Divergence { sample, .. }) => assert!(sample < FRAME * 10),
            other => panic!("expected divergence, got {:?}", other.map(|t| t.reinit_count)),
        }
    }

    fn fake_sfanc_bank() -> SfancBank {
        SFANC_RANGES
            .iter()
            .enumerate()
            .map(|(i, &band)| SfancEntry {
                filter: FirFilter::new(vec![0.01 * (i + 1) as f64; L]).unwrap(),
                band,
            })
            .collect()
    }

    fn tone_frame(freqs: &[f64]) -> MonoSignal {
        let x = (0..FRAME)
            .map(|n| freqs.iter().map(|f| (2.0 * std::f64::consts::PI * f * n as f64 / FS as f64).sin()).sum())
            .collect();
        MonoSignal::new(x, FS).unwrap()
    }

    #[test]
    fn selection_rule_examples() {
        let bank = fake_sfanc_bank();
        let cfg = small_cfg();
        let span = active_span(&tone_frame(&[300.0]), &cfg.predictor).unwrap().unwrap();
        assert_eq!(select_covering(&bank, span), Some(3));
        let span = active_span(&tone_frame(&[400.0, 1600.0]), &cfg.predictor).unwrap().unwrap();
        assert_eq!(select_covering(&bank, span), Some(0));
        let span = active_span(&tone_frame(&[1200.0]), &cfg.predictor).unwrap().unwrap();
        assert_eq!(bank[select_covering(&bank, span).unwrap()].band, (1010.0, 1505.0));
        assert_eq!(active_span(&MonoSignal::zeros(FRAME, FS), &cfg.predictor).unwrap(), None);
    }

    #[test]
    fn sfanc_fxnlms_constant_noise_reinitializes_once() {
        let (paths, _) = small_setup();
        let bank = fake_sfanc_bank();
        // sits well inside the 1010-1505 Hz range
        let x = make_noise(&NoiseSpec::bandpass((1100.0, 1400.0), 1.0, 8)).unwrap();
        let trace = run_sfanc_fxnlms(&x, &paths, &bank, &small_cfg()).unwrap();
        assert_eq!(trace.reinit_count, 1);
        let fixed = run_sfanc(&x, &paths, &bank, &small_cfg()).unwrap();
        assert_eq!(fixed.reinit_count, 1);
        for (s, e) in fixed.frame_start_filters.iter().zip(&fixed.frame_end_filters) {
            assert_eq!(s, e);
        }
        assert_eq!(fixed.frame_start_filters[1], bank[5].filter);
    }

    #[test]
    fn broadband_noise_selects_all_bands_in_gfanc() {
        let (paths, bank) = small_setup();
        let x = make_noise(&NoiseSpec::bandpass(FULL_BAND, 0.5, 9)).unwrap();
        let mut p = BandEnergyPredictor::new(PredictorConfig {
            frame_len: FRAME,
            band_edges: equal_bands(20.0, 2000.0, 8),
            // the lowest band straddles the noise's low-side roll-off
            threshold: 0.2,
            ..PredictorConfig::default()
        })
        .unwrap();
        let trace = run_gfanc_with(&x, &paths, &bank, &small_cfg(), &mut p).unwrap();
        let broadband = generate_control_filter(&WeightVector::ones(8), &bank).unwrap();
        // 100 ms frames are short, so only check that every later frame uses all bands
        for f in &trace.frame_start_filters[1..] {
            assert_eq!(f, &broadband);
        }
    }
}
