//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::controllers::{build_sfanc_bank, write_file, Algorithm, HybridConfig, SfancBank};
use crate::error::{AncError, Result};
use crate::gfanc::{
    decompose, evaluate_fixed_filter, train_control_filter, PredictorConfig, SubFilterBank, TrainConfig, FULL_BAND,
};
use crate::harness::{
    compute_metrics, experiment_clustering_ablation, experiment_comparison, run_algorithm, ExperimentConfig,
    JitteredPredictor, LabeledRun, Setup,
};
use crate::noise::{make_noise, NoiseKind, NoiseSpec};
use crate::paths::{synth_paths, PathSet, DEFAULT_PRIMARY_LEN, DEFAULT_SECONDARY_LEN};
use crate::signal::{equal_bands, taps, FirFilter};
use crate::{controllers, gfanc};

/// Offset between the setup seed (paths, training noise) and the seed of
/// the noise a run is evaluated on, so the two never share a realization.
pub const NOISE_SEED_OFFSET: u64 = 1000;

#[derive(Debug, Parser)]
#[command(name = "hybrid-anc", version, about = "Hybrid generative fixed-filter / FxNLMS active noise control simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Master seed for paths, training and noise.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 16_000, value_parser = positive_u32)]
    pub sample_rate: u32,
    /// Control filter length in taps.
    #[arg(long, global = true, default_value_t = 1024, value_parser = positive_usize)]
    pub filter_len: usize,
    /// Samples per prediction frame.
    #[arg(long, global = true, default_value_t = 16_000, value_parser = positive_usize)]
    pub frame_len: usize,
    /// Clustering distance threshold.
    #[arg(long, global = true, default_value_t = 0.6)]
    pub tau: f64,
    /// Normalized step size.
    #[arg(long, global = true, default_value_t = 0.002)]
    pub mu0: f64,
    /// Number of sub control filters (M).
    #[arg(long, global = true, default_value_t = 8, value_parser = positive_usize)]
    pub sub_filters: usize,
    /// Seconds of band noise used to pre-train each fixed filter.
    #[arg(long, global = true, default_value_t = 60.0)]
    pub train_duration: f64,
    /// Step size used while pre-training fixed filters.
    #[arg(long, global = true, default_value_t = 0.02)]
    pub train_mu0: f64,
    /// Seconds simulated per run.
    #[arg(long, global = true, default_value_t = 10.0)]
    pub duration: f64,
    /// Primary path tap file (synthetic paths otherwise).
    #[arg(long, global = true, requires = "secondary")]
    pub primary: Option<PathBuf>,
    /// Secondary path tap file.
    #[arg(long, global = true, requires = "primary")]
    pub secondary: Option<PathBuf>,
    /// Secondary path estimate tap file (defaults to the secondary path).
    #[arg(long, global = true, requires = "secondary")]
    pub secondary_estimate: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train the broadband control filter.
    TrainBroadband,
    /// Split a broadband filter into sub control filters.
    Decompose {
        #[arg(long)]
        broadband: PathBuf,
    },
    /// Run one algorithm on one noise.
    Simulate(SimulateArgs),
    /// All five algorithms on the comparison noises.
    Compare,
    /// Hybrid with and without clustering on jittered predictions.
    Ablation {
        /// Jitter amplitude added to each predicted weight.
        #[arg(long, default_value_t = 0.05)]
        jitter: f64,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "gfanc-fxnlms", value_parser = parse_algo)]
    pub algo: Algorithm,
    /// broadband | bandpass:LO-HI | vehicle | aircraft
    #[arg(long, default_value = "bandpass:100-1200", conflicts_with = "wav")]
    pub noise: String,
    /// Mono 16-bit PCM recording used as reference noise.
    #[arg(long)]
    pub wav: Option<PathBuf>,
    #[arg(long)]
    pub no_clustering: bool,
    /// Weight vectors to replay instead of predicting them.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Sub-filter directory written by `decompose` (trained afresh otherwise).
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Uniform jitter added to predicted weights.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
}

fn positive_usize(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn positive_u32(s: &str) -> std::result::Result<u32, String> {
    match s.parse::<u32>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_algo(s: &str) -> std::result::Result<Algorithm, String> {
    s.parse().map_err(|e: AncError| e.to_string())
}

/// Parses `broadband`, `vehicle`, `aircraft` or `bandpass:LO-HI`.
pub fn parse_noise(spec: &str, duration_s: f64, seed: u64, sample_rate: u32) -> Result<NoiseSpec> {
    let mut noise = match spec {
        "broadband" => NoiseSpec::bandpass(FULL_BAND, duration_s, seed),
        "vehicle" => NoiseSpec::vehicle(duration_s, seed),
        "aircraft" => NoiseSpec::aircraft(duration_s, seed),
        _ => {
            let band = spec
                .strip_prefix("bandpass:")
                .and_then(|b| b.split_once('-'))
                .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)))
                .ok_or_else(|| {
                    AncError::config(format!(
                        "bad noise spec '{spec}', expected broadband, vehicle, aircraft or bandpass:LO-HI"
                    ))
                })?;
            NoiseSpec::bandpass(band, duration_s, seed)
        }
    };
    noise.sample_rate = sample_rate;
    Ok(noise)
}

impl GlobalOpts {
    fn experiment(&self) -> ExperimentConfig {
        let hybrid = HybridConfig {
            frame_len: self.frame_len,
            sub_filters: self.sub_filters,
            filter_len: self.filter_len,
            sample_rate: self.sample_rate,
            tau: self.tau,
            mu0: self.mu0,
            predictor: PredictorConfig {
                band_edges: equal_bands(FULL_BAND.0, FULL_BAND.1, self.sub_filters),
                frame_len: self.frame_len,
                ..PredictorConfig::default()
            },
            ..HybridConfig::default()
        };
        let train = TrainConfig {
            filter_len: self.filter_len,
            sample_rate: self.sample_rate,
            mu0: self.train_mu0,
            duration_s: self.train_duration,
            ..TrainConfig::default()
        };
        ExperimentConfig {
            hybrid,
            train,
            setup_seed: self.seed,
            duration_s: self.duration,
            ..ExperimentConfig::default()
        }
    }

    fn paths(&self) -> Result<PathSet> {
        match (&self.primary, &self.secondary) {
            (Some(p), Some(s)) => PathSet::load(p, s, self.secondary_estimate.as_deref()),
            _ => synth_paths(self.seed, DEFAULT_PRIMARY_LEN, DEFAULT_SECONDARY_LEN),
        }
    }

    fn path_source(&self) -> String {
        match &self.primary {
            Some(p) => format!("file {}", p.display()),
            None => "synthetic".to_string(),
        }
    }

    fn noise_seed(&self) -> u64 {
        self.seed.wrapping_add(NOISE_SEED_OFFSET)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::TrainBroadband => cmd_train_broadband(g),
        Command::Decompose { broadband } => cmd_decompose(g, broadband),
        Command::Simulate(args) => cmd_simulate(g, args),
        Command::Compare => cmd_compare(g),
        Command::Ablation { jitter } => cmd_ablation(g, *jitter),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AncError::io(dir, e))
}

/// Prints the resolved configuration and writes it as `manifest.txt`.
fn publish_manifest(dir: &Path, lines: &[String]) -> Result<()> {
    for l in lines {
        println!("{l}");
    }
    let text = lines.join("\n") + "\n";
    write_file(&dir.join("manifest.txt"), text.as_bytes())
}

fn base_manifest(command: &str, g: &GlobalOpts, cfg: &ExperimentConfig) -> Vec<String> {
    let mut lines = vec![
        format!("command={command}"),
        format!("seed={}", g.seed),
        format!("paths={}", g.path_source()),
    ];
    lines.extend(cfg.manifest_lines());
    lines
}

fn cmd_train_broadband(g: &GlobalOpts) -> Result<()> {
    let cfg = g.experiment();
    prepare_out(&g.out)?;
    let paths = g.paths()?;
    info!("training {}-tap broadband filter on {} s of noise", g.filter_len, g.train_duration);
    let filter = train_control_filter(&paths, FULL_BAND, g.seed, &cfg.train)?;

    let eval_spec = parse_noise("broadband", 5.0, g.noise_seed(), g.sample_rate)?;
    let nr = evaluate_fixed_filter(&paths, &filter, &make_noise(&eval_spec)?);

    taps::write_taps(g.out.join("broadband.txt"), &filter)?;
    paths.save(&g.out)?;
    let mut lines = base_manifest("train-broadband", g, &cfg);
    lines.push(format!("band={},{}", FULL_BAND.0, FULL_BAND.1));
    lines.push(format!("eval_noise_seed={}", eval_spec.seed));
    lines.push(format!("eval_duration_s={}", eval_spec.duration_s));
    lines.push(format!("noise_reduction_db={nr:.3}"));
    lines.push("output=broadband.txt".to_string());
    publish_manifest(&g.out, &lines)
}

fn cmd_decompose(g: &GlobalOpts, broadband: &Path) -> Result<()> {
    let filter = taps::read_taps(broadband)?;
    let bank = gfanc::decompose(&filter, g.sub_filters, FULL_BAND, g.sample_rate)?;
    // the bank writes its own manifest with one band line per sub-filter
    let written = bank.save(&g.out)?;
    println!("command=decompose");
    println!("broadband={}", broadband.display());
    println!("sub_filters={}", g.sub_filters);
    println!("sample_rate={}", g.sample_rate);
    for p in written {
        println!("wrote={}", p.display());
    }
    Ok(())
}

fn load_or_train_bank(g: &GlobalOpts, paths: &PathSet, cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<SubFilterBank> {
    match dir {
        Some(d) => SubFilterBank::load(d),
        None => {
            let broadband = train_control_filter(paths, FULL_BAND, g.seed, &cfg.train)?;
            decompose(&broadband, g.sub_filters, FULL_BAND, g.sample_rate)
        }
    }
}

fn cmd_simulate(g: &GlobalOpts, args: &SimulateArgs) -> Result<()> {
    let mut cfg = g.experiment();
    cfg.jitter = args.jitter;
    cfg.hybrid.clustering_enabled = !args.no_clustering;
    if let Some(r) = &args.replay {
        cfg.hybrid.predictor = PredictorConfig {
            frame_len: g.frame_len,
            ..PredictorConfig::replay(r, g.sub_filters)
        };
    }
    cfg.hybrid.validate()?;
    if !(args.jitter >= 0.0) {
        return Err(AncError::config("jitter must be non-negative"));
    }
    prepare_out(&g.out)?;

    let spec = match &args.wav {
        Some(path) => NoiseSpec {
            kind: NoiseKind::WavFile { path: path.clone() },
            duration_s: g.duration,
            seed: g.noise_seed(),
            level: 1.0,
            sample_rate: g.sample_rate,
        },
        None => parse_noise(&args.noise, g.duration, g.noise_seed(), g.sample_rate)?,
    };
    let noise = make_noise(&spec)?;
    let paths = g.paths()?;

    let needs_bank = matches!(args.algo, Algorithm::Gfanc | Algorithm::GfancFxNlms);
    let needs_sfanc = matches!(args.algo, Algorithm::Sfanc | Algorithm::SfancFxNlms);
    let bank = if needs_bank {
        load_or_train_bank(g, &paths, &cfg, args.bank.as_deref())?
    } else {
        // unused by the selected algorithm
        SubFilterBank::new(vec![FirFilter::zeros(g.filter_len)], vec![FULL_BAND], "unused")?
    };
    let sfanc: SfancBank = if needs_sfanc {
        build_sfanc_bank(&paths, g.seed, &cfg.train)?
    } else {
        Vec::new()
    };
    let setup = Setup {
        broadband: FirFilter::zeros(g.filter_len),
        paths,
        bank,
        sfanc,
    };

    let jittered = args.jitter > 0.0 && needs_bank && args.replay.is_none();
    let trace = if jittered {
        let base = gfanc::BandEnergyPredictor::new(cfg.hybrid.predictor.clone())?;
        let mut predictor = JitteredPredictor::new(base, args.jitter, g.noise_seed());
        let hybrid = HybridConfig {
            adaptation_enabled: args.algo == Algorithm::GfancFxNlms,
            ..cfg.hybrid.clone()
        };
        controllers::run_hybrid_with(&noise, &setup.paths, &setup.bank, &hybrid, &mut predictor)?
    } else {
        run_algorithm(args.algo, &noise, &setup, &cfg.hybrid)?
    };
    let report = compute_metrics(&trace, cfg.window_s, cfg.threshold_db)?;
    let run = LabeledRun {
        label: args.algo.name().to_string(),
        trace,
        report,
    };
    run.write(&g.out)?;

    let mut lines = base_manifest("simulate", g, &cfg);
    lines.push(format!("algo={}", args.algo));
    lines.push(format!("clustering={}", cfg.hybrid.clustering_enabled));
    lines.push(format!("noise={}", spec.describe()));
    lines.push(format!("noise_seed={}", spec.seed));
    if args.wav.is_none() {
        lines.push("noise_note=synthetic stand-in, not a recording".to_string());
    }
    if let Some(r) = &args.replay {
        lines.push(format!("replay={}", r.display()));
    }
    if let Some(b) = &args.bank {
        lines.push(format!("bank={}", b.display()));
    }
    lines.push(format!("reinit_count={}", run.report.reinit_count));
    lines.push(format!("steady_state_mse={:e}", run.report.steady_state_mse));
    lines.push(format!("final_nr_db={:.3}", run.report.final_nr_db));
    publish_manifest(&g.out, &lines)
}

fn cmd_compare(g: &GlobalOpts) -> Result<()> {
    let cfg = g.experiment();
    cfg.hybrid.validate()?;
    prepare_out(&g.out)?;
    let setup = Setup::from_paths(g.paths()?, &cfg)?;
    let scenarios = experiment_comparison(&setup, &cfg, g.noise_seed())?;
    for s in &scenarios {
        let dir = g.out.join(&s.name);
        s.write(&dir, &cfg, "compare")?;
        for r in &s.runs {
            println!("{}: {}", s.name, r.report.csv_row(&r.label));
        }
    }
    let mut lines = base_manifest("compare", g, &cfg);
    lines.push(format!("noise_seed={}", g.noise_seed()));
    lines.push(format!("scenarios={}", scenarios.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" ")));
    publish_manifest(&g.out, &lines)
}

fn cmd_ablation(g: &GlobalOpts, jitter: f64) -> Result<()> {
    if !(jitter >= 0.0) {
        return Err(AncError::config("jitter must be non-negative"));
    }
    let mut cfg = g.experiment();
    cfg.jitter = jitter;
    cfg.hybrid.validate()?;
    prepare_out(&g.out)?;
    let paths = g.paths()?;
    // the ablation only needs the sub-filter bank
    let broadband = train_control_filter(&paths, FULL_BAND, g.seed, &cfg.train)?;
    let bank = decompose(&broadband, g.sub_filters, FULL_BAND, g.sample_rate)?;
    let setup = Setup {
        paths,
        broadband,
        bank,
        sfanc: Vec::new(),
    };
    let scenarios = experiment_clustering_ablation(&setup, &cfg, g.noise_seed())?;
    for s in &scenarios {
        s.write(&g.out.join(&s.name), &cfg, "ablation")?;
        for r in &s.runs {
            println!("{}: {}", s.name, r.report.csv_row(&r.label));
        }
    }
    let mut lines = base_manifest("ablation", g, &cfg);
    lines.push(format!("noise_seed={}", g.noise_seed()));
    lines.push(format!("scenarios={}", scenarios.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" ")));
    publish_manifest(&g.out, &lines)
}
