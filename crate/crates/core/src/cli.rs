//! Command-line front end: `synth`, `train`, `evaluate`, `compare`,
//! `inspect-model`.
//!
//! Exit codes: 0 ok, 1 runtime failure, 2 configuration error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_recording, save_recording, EpochSet, FileFormat, Window};
use crate::eval::report::{compare, ComparisonStats};
use crate::eval::{cross_validate_epochs, CvParams, EvalReport, Failure, Granularity, SessionResult, StatsUnit};
use crate::linalg::Shrinkage;
use crate::pipeline::{predict, train_pipeline, PipelineConfig, PipelineModel, Preprocessing};
use crate::spatial::{Method, SpecCspParams};
use crate::synth::{generate_session, Mixing, SynthSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Flat key-value run configuration. Defaults reproduce the reference
/// calibration setup; command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    pub decimation: usize,
    pub cue_label: String,
    pub task_window_s: [f64; 2],
    pub rest_window_s: [f64; 2],
    pub n_pairs: usize,
    pub bank_width_hz: f64,
    pub spoc_components: usize,
    pub speccsp_p: f64,
    pub speccsp_q: f64,
    pub speccsp_iterations: usize,
    pub normalize_trace: bool,
    /// Fixed LDA shrinkage; absent means Ledoit-Wolf.
    pub lda_gamma: Option<f64>,
    pub folds: usize,
    pub margin: usize,
    pub seed: u64,
    pub stats_unit: StatsUnit,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            methods: Method::COMPARED.to_vec(),
            band_low_hz: p.preprocessing.band_hz.0,
            band_high_hz: p.preprocessing.band_hz.1,
            filter_order: p.preprocessing.filter_order,
            decimation: p.preprocessing.decimation,
            cue_label: p.cue_label,
            task_window_s: [p.task_window.start_s, p.task_window.end_s],
            rest_window_s: [p.rest_window.start_s, p.rest_window.end_s],
            n_pairs: p.n_pairs,
            bank_width_hz: p.bank_width_hz,
            spoc_components: p.spoc_components,
            speccsp_p: p.speccsp.p,
            speccsp_q: p.speccsp.q,
            speccsp_iterations: p.speccsp.n_iterations,
            normalize_trace: p.normalize_trace,
            lda_gamma: None,
            folds: CvParams::default().n_folds,
            margin: CvParams::default().margin,
            seed: 0,
            stats_unit: StatsUnit::Session,
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        let band = (self.band_low_hz, self.band_high_hz);
        PipelineConfig {
            preprocessing: Preprocessing { band_hz: band, filter_order: self.filter_order, decimation: self.decimation },
            cue_label: self.cue_label.clone(),
            task_window: Window::new(self.task_window_s[0], self.task_window_s[1]),
            rest_window: Window::new(self.rest_window_s[0], self.rest_window_s[1]),
            n_pairs: self.n_pairs,
            bank_width_hz: self.bank_width_hz,
            speccsp: SpecCspParams {
                p: self.speccsp_p,
                q: self.speccsp_q,
                n_iterations: self.speccsp_iterations,
                band_hz: band,
                ..SpecCspParams::default()
            },
            spoc_components: self.spoc_components,
            normalize_trace: self.normalize_trace,
            lda_shrinkage: self.lda_gamma.map_or(Shrinkage::Auto, Shrinkage::Fixed),
        }
    }

    pub fn cv(&self) -> CvParams {
        CvParams { n_folds: self.folds, margin: self.margin }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.methods.is_empty() {
            return Err(CliError::Config("methods: at least one method required".into()));
        }
        if !(self.band_low_hz > 0.0 && self.band_high_hz > self.band_low_hz) {
            return Err(CliError::Config("band: need 0 < low < high".into()));
        }
        if self.decimation == 0 {
            return Err(CliError::Config("decimation: must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(CliError::Config("folds: must be at least 2".into()));
        }
        if self.n_pairs == 0 {
            return Err(CliError::Config("n_pairs: must be at least 1".into()));
        }
        if let Some(g) = self.lda_gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(CliError::Config(format!("lda_gamma: must lie in [0, 1], got {g}")));
            }
        }
        Ok(())
    }
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("band low: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("band high: {e}"))?;
    Ok((lo, hi))
}

fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    s.split(',').map(|m| m.trim().parse::<Method>().map_err(|e| e.to_string())).collect()
}

#[derive(Debug, Parser)]
#[command(name = "mibci", version, about = "Offline motor-imagery BCI calibration toolkit")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic sessions with known ground truth.
    Synth(SynthArgs),
    /// Train a pipeline on one recording and save the model.
    Train(TrainArgs),
    /// Cross-validate every method on every session and write reports.
    Evaluate(EvaluateArgs),
    /// Run the statistical comparison on one or more report files.
    Compare(CompareArgs),
    /// Print a summary of a saved model.
    InspectModel(InspectArgs),
}

/// Pipeline overrides shared by `train` and `evaluate`.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineFlags {
    /// Flat key-value TOML file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bandpass edges in Hz, e.g. `6:32`.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl PipelineFlags {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some((lo, hi)) = self.band {
            cfg.band_low_hz = lo;
            cfg.band_high_hz = hi;
        }
        if let Some(p) = self.pairs {
            cfg.n_pairs = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Sessions per subject.
    #[arg(long, default_value_t = 1)]
    pub sessions: usize,
    #[arg(long, default_value_t = 1)]
    pub subjects: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the modulation depth of every source.
    #[arg(long)]
    pub modulation: Option<f64>,
    /// Synth spec TOML; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `csv` or `bin`.
    #[arg(long, default_value = "csv")]
    pub format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    pub input: PathBuf,
    #[arg(long, default_value = "fbcsp")]
    pub method: Method,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    /// Model JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Session files or directories containing them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Comma-separated, e.g. `speccsp,spoc,fbcsp`.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub margin: Option<usize>,
    /// Worker threads; output order does not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// `report.json` files written by `evaluate`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "session")]
    pub unit: String,
    /// Statistics JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub model: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
        }),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&a)?;
            print!("{}", report.render());
            if report.failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("{} evaluation(s) failed", report.failures.len())))
            }
        }
        Command::Compare(a) => cmd_compare(&a).map(|s| println!("{}", serde_json::to_string_pretty(&s).unwrap())),
        Command::InspectModel(a) => cmd_inspect(&a),
    }
}

/// Session `j` of subject `i` is named `sII_JJ`; each subject has its own
/// mixing matrix and each session its own seed, all derived from `seed`.
pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>, CliError> {
    let mut base = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(m) = args.modulation {
        for s in &mut base.sources {
            s.modulation = m;
        }
    }
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let format = match args.format.as_str() {
        "csv" => FileFormat::Csv,
        "bin" => FileFormat::RawBinary,
        other => return Err(CliError::Config(format!("format: expected csv or bin, got '{other}'"))),
    };
    if args.sessions == 0 || args.subjects == 0 {
        return Err(CliError::Config("sessions and subjects must be at least 1".into()));
    }
    fs::create_dir_all(&args.out).map_err(runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut written = Vec::new();
    for subject in 1..=args.subjects {
        let mixing_seed: u64 = rng.random();
        for session in 1..=args.sessions {
            let mut spec = base.clone();
            spec.seed = rng.random();
            if let Mixing::Random { seed, .. } = &mut spec.mixing {
                *seed = mixing_seed;
            }
            let name = format!("s{subject:02}_{session:02}");
            let rec = generate_session(&spec).map_err(runtime)?;
            let path = args.out.join(format!("{name}.{}", format.extension()));
            save_recording(&rec, &path, format).map_err(runtime)?;
            fs::write(args.out.join(format!("{name}.spec.toml")), toml::to_string(&spec).map_err(runtime)?)
                .map_err(runtime)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn load_epochs(path: &Path, config: &PipelineConfig) -> Result<EpochSet, String> {
    let rec = load_recording(path, FileFormat::from_path(path)).map_err(|e| e.to_string())?;
    config.epochs(&rec).map_err(|e| e.to_string())
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = args.pipeline.resolve()?;
    cfg.validate()?;
    let pc = cfg.pipeline();
    let rec = load_recording(&args.input, FileFormat::from_path(&args.input)).map_err(runtime)?;
    let model = train_pipeline(&rec, args.method, &pc).map_err(runtime)?;
    let epochs = pc.epochs(&rec).map_err(runtime)?;
    let preds = predict(&model, &epochs).map_err(runtime)?;
    let correct = preds.iter().zip(epochs.labels()).filter(|(p, t)| p.label == **t).count();
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(runtime)?;
    }
    fs::write(&args.out, model.to_json()).map_err(runtime)?;
    println!(
        "{}: {} trials, training accuracy {:.1}%, model written to {}",
        args.method.display_name(),
        epochs.len(),
        100.0 * correct as f64 / epochs.len() as f64,
        args.out.display()
    );
    Ok(())
}

fn is_session_file(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
    !name.ends_with(".markers.csv") && matches!(ext, "csv" | "bin" | "f32")
}

/// Expands directories (sorted) into session files.
pub fn session_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.is_file() && is_session_file(q))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::Config(format!("{}: no such file or directory", p.display())));
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no session files found".into()));
    }
    Ok(out)
}

fn session_name(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("session").to_string()
}

/// Runs every (session, method) cross-validation and writes `folds.csv`,
/// `table_sessions.csv`, `table_folds.csv`, `rates.csv`, `report.json` and
/// the resolved `run_config.toml` into `out`.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport, CliError> {
    let mut cfg = args.pipeline.resolve()?;
    if let Some(m) = &args.method {
        cfg.methods = parse_methods(m).map_err(|e| CliError::Config(format!("method: {e}")))?;
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(m) = args.margin {
        cfg.margin = m;
    }
    cfg.validate()?;
    let files = session_files(&args.inputs)?;
    fs::create_dir_all(&args.out).map_err(runtime)?;
    fs::write(args.out.join("run_config.toml"), cfg.to_toml()).map_err(runtime)?;

    let pc = cfg.pipeline();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs.max(1)).build().map_err(runtime)?;
    let (results, failures) = pool.install(|| {
        let epochs: Vec<Result<EpochSet, String>> = files.par_iter().map(|f| load_epochs(f, &pc)).collect();
        let jobs: Vec<(usize, Method)> =
            (0..files.len()).flat_map(|i| cfg.methods.iter().map(move |&m| (i, m))).collect();
        let outcomes: Vec<Result<SessionResult, Failure>> = jobs
            .par_iter()
            .map(|&(i, method)| {
                let session = session_name(&files[i]);
                let fail = |error: String| Failure { session: session.clone(), method, error };
                let e = epochs[i].as_ref().map_err(|e| fail(e.clone()))?;
                let cv = cross_validate_epochs(e, method, cfg.cv(), &pc).map_err(|e| fail(e.to_string()))?;
                log::info!("{session} {}: {:.3}", method.name(), cv.mean_accuracy);
                Ok(SessionResult::from_cv(&session, &cv))
            })
            .collect();
        let mut results = Vec::new();
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(r) => results.push(r),
                Err(f) => failures.push(f),
            }
        }
        (results, failures)
    });
    for f in &failures {
        eprintln!("error: {} [{}]: {}", f.session, f.method.name(), f.error);
    }
    let report = EvalReport::new(cfg.methods.clone(), results, failures, cfg.stats_unit);
    let write = |name: &str, body: String| fs::write(args.out.join(name), body).map_err(runtime);
    write("folds.csv", report.folds_csv())?;
    write("table_sessions.csv", report.table_csv(Granularity::Sessions))?;
    write("table_folds.csv", report.table_csv(Granularity::Folds))?;
    write("rates.csv", report.rates_csv())?;
    write("report.json", report.to_json())?;
    Ok(report)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<ComparisonStats, CliError> {
    let unit = match args.unit.as_str() {
        "session" => StatsUnit::Session,
        "subject" => StatsUnit::Subject,
        other => return Err(CliError::Config(format!("unit: expected session or subject, got '{other}'"))),
    };
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            EvalReport::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stats = compare(&reports, unit).map_err(runtime)?;
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&stats).unwrap()).map_err(runtime)?;
    }
    Ok(stats)
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.model).map_err(|e| CliError::Config(format!("{}: {e}", args.model.display())))?;
    let model = PipelineModel::from_json(&text).map_err(runtime)?;
    let s = &model.spatial;
    println!("format       {}", model.format);
    println!("method       {}", model.method.display_name());
    println!("channels     {}", s.channel_labels.join(","));
    println!("rate         {} Hz (after decimation by {})", s.sample_rate_hz, model.preprocessing.decimation);
    println!("bandpass     {}–{} Hz", model.preprocessing.band_hz.0, model.preprocessing.band_hz.1);
    println!("bands        {}", s.bands.len());
    println!("features     {}", s.n_features());
    println!("lda gamma    {:.4}{}", model.lda.shrinkage_gamma, if model.lda.singular_fallback { " (fallback)" } else { "" });
    let pattern = s.top_pattern();
    let cells: Vec<String> = s.channel_labels.iter().zip(pattern.iter()).map(|(c, v)| format!("{c}={v:.3}")).collect();
    println!("top pattern  {}", cells.join(" "));
    Ok(())
}
