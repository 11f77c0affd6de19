//! Metrics and scripted experiments: the clustering ablation and the
//! five-algorithm comparison.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controllers::{
    build_sfanc_bank, run_fxnlms, run_gfanc, run_hybrid, run_hybrid_with, run_sfanc, run_sfanc_fxnlms, write_file,
    Algorithm, HybridConfig, RunTrace, SfancBank,
};
use crate::error::{AncError, Result};
use crate::gfanc::{
    decompose, train_control_filter, BandEnergyPredictor, SubFilterBank, TrainConfig, WeightPredictor, WeightVector,
    FULL_BAND,
};
use crate::noise::{make_noise, NoiseSpec};
use crate::paths::{synth_paths, PathSet, DEFAULT_PRIMARY_LEN, DEFAULT_SECONDARY_LEN};
use crate::signal::{FirFilter, MonoSignal};

pub use crate::noise::{NoiseKind, Tone};

pub const DEFAULT_WINDOW_S: f64 = 1.0;
/// Noise reduction (dB) that counts as "converged" for response-time
/// measurements: the residual is 10 dB below the disturbance.
pub const DEFAULT_THRESHOLD_DB: f64 = 10.0;
pub const EARLY_WINDOW_S: f64 = 2.0;
const ENERGY_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Windowed noise reduction in dB, one value per sample. Windows are
    /// truncated at the start of the record.
    pub nr_curve: Vec<f64>,
    /// Mean of e² over the last window.
    pub steady_state_mse: f64,
    /// First time the windowed NR reaches the threshold.
    pub time_to_threshold_s: Option<f64>,
    pub reinit_count: usize,
    /// Mean of the NR curve over the first two seconds.
    pub early_mean_nr_db: f64,
    /// NR over the last window.
    pub final_nr_db: f64,
}

pub const METRICS_HEADER: &str = "algo,steady_state_mse,time_to_threshold_s,reinit_count,early_mean_nr_db,final_nr_db";

impl MetricsReport {
    pub fn csv_row(&self, algo: &str) -> String {
        let time = self.time_to_threshold_s.map(|t| format!("{t:?}")).unwrap_or_else(|| "none".into());
        format!(
            "{algo},{:?},{time},{},{:?},{:?}",
            self.steady_state_mse, self.reinit_count, self.early_mean_nr_db, self.final_nr_db
        )
    }

    /// Mean NR over samples `[start, end)`.
    pub fn mean_nr_db(&self, start: usize, end: usize) -> f64 {
        let end = end.min(self.nr_curve.len());
        if start >= end {
            return f64::NAN;
        }
        self.nr_curve[start..end].iter().sum::<f64>() / (end - start) as f64
    }
}

/// `10·log10(Σ d² / Σ e²)` over a sliding window ending at each sample.
pub fn windowed_nr(desired: &[f64], error: &[f64], window: usize) -> Vec<f64> {
    assert_eq!(desired.len(), error.len());
    assert!(window > 0);
    let mut sd = 0.0;
    let mut se = 0.0;
    let mut out = Vec::with_capacity(desired.len());
    for n in 0..desired.len() {
        sd += desired[n] * desired[n];
        se += error[n] * error[n];
        if n >= window {
            let old = n - window;
            sd -= desired[old] * desired[old];
            se -= error[old] * error[old];
        }
        // running sums can dip a hair below zero
        sd = sd.max(0.0);
        se = se.max(0.0);
        out.push(10.0 * (sd.max(ENERGY_FLOOR) / se.max(ENERGY_FLOOR)).log10());
    }
    out
}

pub fn compute_metrics(trace: &RunTrace, window_s: f64, threshold_db: f64) -> Result<MetricsReport> {
    let fs = trace.error.sample_rate() as f64;
    let window = (window_s * fs).round() as usize;
    if window == 0 {
        return Err(AncError::config("metrics window must hold at least one sample"));
    }
    let d = trace.desired.samples();
    let e = trace.error.samples();
    if d.is_empty() {
        return Err(AncError::input("cannot compute metrics of an empty trace"));
    }
    let nr_curve = windowed_nr(d, e, window);
    let tail = &e[e.len().saturating_sub(window)..];
    let steady_state_mse = tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64;
    let time_to_threshold_s = nr_curve.iter().position(|&v| v >= threshold_db).map(|n| n as f64 / fs);
    let early = ((EARLY_WINDOW_S * fs).round() as usize).min(nr_curve.len());
    let early_mean_nr_db = nr_curve[..early].iter().sum::<f64>() / early as f64;
    let final_nr_db = *nr_curve.last().expect("non-empty");
    Ok(MetricsReport {
        nr_curve,
        steady_state_mse,
        time_to_threshold_s,
        reinit_count: trace.reinit_count,
        early_mean_nr_db,
        final_nr_db,
    })
}

/// Band-energy predictor with seeded uniform jitter on every element, a
/// stand-in for frame-to-frame variation of a learned predictor.
pub struct JitteredPredictor {
    base: BandEnergyPredictor,
    amplitude: f64,
    rng: ChaCha8Rng,
}

impl JitteredPredictor {
    pub fn new(base: BandEnergyPredictor, amplitude: f64, seed: u64) -> Self {
        Self {
            base,
            amplitude,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl WeightPredictor for JitteredPredictor {
    fn predict(&mut self, frame: &MonoSignal) -> Result<WeightVector> {
        let g = self.base.predict(frame)?;
        if self.amplitude == 0.0 {
            return Ok(g);
        }
        let a = self.amplitude;
        let jittered = g.values().iter().map(|v| v + self.rng.random_range(-a..=a)).collect();
        // entries pushed outside [0, 1] are clamped by construction
        Ok(WeightVector::new(jittered))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub hybrid: HybridConfig,
    pub train: TrainConfig,
    /// Seed for path synthesis and filter training.
    pub setup_seed: u64,
    pub primary_len: usize,
    pub secondary_len: usize,
    /// Length of each simulated run.
    pub duration_s: f64,
    pub window_s: f64,
    pub threshold_db: f64,
    /// Jitter amplitude of the ablation predictor.
    pub jitter: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hybrid: HybridConfig::default(),
            train: TrainConfig::default(),
            setup_seed: 0,
            primary_len: DEFAULT_PRIMARY_LEN,
            secondary_len: DEFAULT_SECONDARY_LEN,
            duration_s: 10.0,
            window_s: DEFAULT_WINDOW_S,
            threshold_db: DEFAULT_THRESHOLD_DB,
            jitter: 0.05,
        }
    }
}

impl ExperimentConfig {
    /// `key=value` lines describing everything that determines the outputs.
    pub fn manifest_lines(&self) -> Vec<String> {
        let h = &self.hybrid;
        let p = &h.predictor;
        vec![
            format!("setup_seed={}", self.setup_seed),
            format!("sample_rate={}", h.sample_rate),
            format!("filter_len={}", h.filter_len),
            format!("frame_len={}", h.frame_len),
            format!("sub_filters={}", h.sub_filters),
            format!("tau={}", h.tau),
            format!("mu0={}", h.mu0),
            format!("eps={}", h.eps),
            format!("extra_latency={}", h.extra_latency),
            format!("predictor_soft={}", p.soft),
            format!("predictor_threshold={}", p.threshold),
            format!("primary_len={}", self.primary_len),
            format!("secondary_len={}", self.secondary_len),
            format!("train_duration_s={}", self.train.duration_s),
            format!("train_mu0={}", self.train.mu0),
            format!("duration_s={}", self.duration_s),
            format!("window_s={}", self.window_s),
            format!("threshold_db={}", self.threshold_db),
            format!("jitter={}", self.jitter),
        ]
    }
}

/// Everything trained once and shared by many runs.
#[derive(Debug, Clone)]
pub struct Setup {
    pub paths: PathSet,
    pub broadband: FirFilter,
    pub bank: SubFilterBank,
    pub sfanc: SfancBank,
}

impl Setup {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let paths = synth_paths(cfg.setup_seed, cfg.primary_len, cfg.secondary_len)?;
        Self::from_paths(paths, cfg)
    }

    pub fn from_paths(paths: PathSet, cfg: &ExperimentConfig) -> Result<Self> {
        let train = TrainConfig {
            filter_len: cfg.hybrid.filter_len,
            sample_rate: cfg.hybrid.sample_rate,
            ..cfg.train.clone()
        };
        let (broadband, sfanc) = rayon::join(
            || train_control_filter(&paths, FULL_BAND, cfg.setup_seed, &train),
            || build_sfanc_bank(&paths, cfg.setup_seed, &train),
        );
        let broadband = broadband?;
        let bank = decompose(&broadband, cfg.hybrid.sub_filters, FULL_BAND, cfg.hybrid.sample_rate)?;
        Ok(Self {
            paths,
            broadband,
            bank,
            sfanc: sfanc?,
        })
    }
}

/// One simulated run with its metrics.
#[derive(Debug, Clone)]
pub struct LabeledRun {
    pub label: String,
    pub trace: RunTrace,
    pub report: MetricsReport,
}

impl LabeledRun {
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.trace.write_trace_csv(&dir.join(format!("trace_{}.csv", self.label)))?;
        self.trace.write_events_csv(&dir.join(format!("events_{}.csv", self.label)))?;
        self.trace.write_cluster_csv(&dir.join(format!("clusters_{}.csv", self.label)))?;
        let metrics = format!("{METRICS_HEADER}\n{}\n", self.report.csv_row(&self.label));
        write_file(&dir.join(format!("metrics_{}.csv", self.label)), metrics.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub noise: NoiseSpec,
    pub runs: Vec<LabeledRun>,
}

impl Scenario {
    pub fn run(&self, label: &str) -> Option<&LabeledRun> {
        self.runs.iter().find(|r| r.label == label)
    }

    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig, experiment: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| AncError::io(dir, e))?;
        for r in &self.runs {
            r.write(dir)?;
        }
        let mut manifest = vec![
            format!("experiment={experiment}"),
            format!("scenario={}", self.name),
            format!("noise={}", self.noise.describe()),
            format!("noise_seed={}", self.noise.seed),
            format!("noise_level={}", self.noise.level),
            "noise_note=synthetic stand-in, not a recording".to_string(),
            "paths=synthetic".to_string(),
        ];
        manifest.extend(cfg.manifest_lines());
        manifest.push(format!("runs={}", self.runs.iter().map(|r| r.label.as_str()).collect::<Vec<_>>().join(" ")));
        let text = manifest.join("\n") + "\n";
        write_file(&dir.join("manifest.txt"), text.as_bytes())
    }
}

fn labeled(label: &str, trace: RunTrace, cfg: &ExperimentConfig) -> Result<LabeledRun> {
    let report = compute_metrics(&trace, cfg.window_s, cfg.threshold_db)?;
    Ok(LabeledRun {
        label: label.to_string(),
        trace,
        report,
    })
}

fn with_duration(mut spec: NoiseSpec, cfg: &ExperimentConfig) -> NoiseSpec {
    spec.sample_rate = cfg.hybrid.sample_rate;
    spec.duration_s = cfg.duration_s;
    spec
}

/// Noises used by the clustering ablation.
pub fn ablation_noises(seed: u64, cfg: &ExperimentConfig) -> Vec<(String, NoiseSpec)> {
    vec![
        ("aircraft".into(), with_duration(NoiseSpec::aircraft(cfg.duration_s, seed), cfg)),
        ("broadband_20_2000".into(), with_duration(NoiseSpec::bandpass(FULL_BAND, cfg.duration_s, seed), cfg)),
    ]
}

/// Noises used by the five-algorithm comparison.
pub fn comparison_noises(seed: u64, cfg: &ExperimentConfig) -> Vec<(String, NoiseSpec)> {
    vec![
        ("vehicle".into(), with_duration(NoiseSpec::vehicle(cfg.duration_s, seed), cfg)),
        ("band_100_1200".into(), with_duration(NoiseSpec::bandpass((100.0, 1200.0), cfg.duration_s, seed), cfg)),
    ]
}

pub const CLUSTERING_ON: &str = "gfanc-fxnlms-clustering";
pub const CLUSTERING_OFF: &str = "gfanc-fxnlms-no-clustering";

/// Hybrid runs with and without the clustering gate, fed by the same
/// jittered predictions (same jitter seed) on the same noise.
pub fn experiment_clustering_ablation(setup: &Setup, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Scenario>> {
    ablation_noises(seed, cfg)
        .into_par_iter()
        .map(|(name, spec)| {
            let noise = make_noise(&spec)?;
            let runs = [(CLUSTERING_ON, true), (CLUSTERING_OFF, false)]
                .into_par_iter()
                .map(|(label, clustering)| {
                    let hybrid = HybridConfig {
                        clustering_enabled: clustering,
                        ..cfg.hybrid.clone()
                    };
                    let base = BandEnergyPredictor::new(hybrid.predictor.clone())?;
                    let mut predictor = JitteredPredictor::new(base, cfg.jitter, seed);
                    let trace = run_hybrid_with(&noise, &setup.paths, &setup.bank, &hybrid, &mut predictor)?;
                    labeled(label, trace, cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Scenario { name, noise: spec, runs })
        })
        .collect()
}

/// Runs one algorithm on `noise` with the shared setup.
pub fn run_algorithm(algo: Algorithm, noise: &MonoSignal, setup: &Setup, hybrid: &HybridConfig) -> Result<RunTrace> {
    match algo {
        Algorithm::FxNlms => run_fxnlms(noise, &setup.paths, hybrid),
        Algorithm::Gfanc => run_gfanc(noise, &setup.paths, &setup.bank, hybrid),
        Algorithm::Sfanc => run_sfanc(noise, &setup.paths, &setup.sfanc, hybrid),
        Algorithm::SfancFxNlms => run_sfanc_fxnlms(noise, &setup.paths, &setup.sfanc, hybrid),
        Algorithm::GfancFxNlms => run_hybrid(noise, &setup.paths, &setup.bank, hybrid),
    }
}

/// All five algorithms on the vehicle stand-in and on 100-1200 Hz noise.
pub fn experiment_comparison(setup: &Setup, cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Scenario>> {
    comparison_noises(seed, cfg)
        .into_par_iter()
        .map(|(name, spec)| {
            let noise = make_noise(&spec)?;
            let runs = Algorithm::ALL
                .into_par_iter()
                .map(|algo| labeled(algo.name(), run_algorithm(algo, &noise, setup, &cfg.hybrid)?, cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(Scenario { name, noise: spec, runs })
        })
        .collect()
}
