//! Command-line front end: `simulate`, `run`, `evaluate` and `bench`.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 filter
//! divergence, 4 file system error.

pub mod config;
pub mod files;

use crate::eval::{self, BenchReport, DriftReport, EvalError};
use crate::fusion::{self, FusionError, RunOutput};
use crate::model::{ImuRole, Mode, ModelError, Topology};
use crate::sim::{self, SimError};
use clap::{Args, Parser, Subcommand};
use config::{AppConfig, ConfigError};
use files::{read_imu, read_trajectory, write_imu, write_toml, write_trajectory, RunManifest};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Format { .. } => 2,
            CliError::Io { .. } => 4,
            CliError::Fusion(FusionError::Diverged { .. } | FusionError::AllDiverged(_)) => 3,
            CliError::Fusion(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "wheelnav", version, about = "Multi-IMU dead reckoning for wheeled robots")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a drive and write IMU streams, truth and a manifest.
    Simulate(SimulateArgs),
    /// Run the filter on the streams of a manifest.
    Run(RunArgs),
    /// Drift rate and heading error of a trajectory against truth.
    Evaluate(EvaluateArgs),
    /// Time the distributed and centralized filters on a manifest's streams.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Configuration file applied over the shipped defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub manifest: PathBuf,
    /// Configuration file applied over the manifest's configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// single_wheel, dual_wheel, body_wheel or triple.
    #[arg(long)]
    pub topology: Option<Topology>,
    /// distributed or centralized.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Output directory; defaults to the manifest's `out` or its directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimated trajectory CSV.
    #[arg(long)]
    pub est: PathBuf,
    /// Truth trajectory CSV.
    #[arg(long)]
    pub truth: PathBuf,
    /// Window increment of traveled distance, m.
    #[arg(long = "window-l", default_value_t = 100.0)]
    pub window_l: f64,
    /// Output directory; defaults to the estimate's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command and returns a short human-readable summary.
pub fn execute(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Simulate(a) => simulate(a).map(|m| format!("wrote {} streams and truth for seed {}", m.streams.len(), m.seed.unwrap_or_default())),
        Command::Run(a) => run(a).map(|r| format!("wrote {}", r.trajectory.display())),
        Command::Evaluate(a) => evaluate(a).map(|r| format!("mean drift rate {:.3} %, heading RMSE {:.2} deg", r.mean_rate, r.heading_rmse_deg)),
        Command::Bench(a) => bench(a).map(|r| {
            format!(
                "distributed {:.1} us/epoch, centralized {:.1} us/epoch, ratio {:.2} ({})",
                r.distributed.us_per_epoch, r.centralized.us_per_epoch, r.ratio, r.hardware
            )
        }),
    }
}

pub const MANIFEST: &str = "manifest.toml";
pub const TRUTH: &str = "truth.csv";

fn stream_file(role: ImuRole) -> String {
    format!("{}.csv", role.name())
}

/// Simulates all three IMUs and writes them with truth and a manifest.
pub fn simulate(a: &SimulateArgs) -> Result<RunManifest, CliError> {
    let cfg = AppConfig::load(None, a.config.as_deref())?;
    let spec = cfg.trajectory_spec()?;
    let dt = 1.0 / cfg.filter.imu_rate;
    let truth = sim::generate_trajectory(&spec, dt)?;
    let geoms = cfg.vehicle().all();
    let errs: Vec<_> = geoms.iter().map(|g| cfg.sensor(g.role)).collect();
    let out = sim::synthesize_all(&truth, &geoms, &errs, a.seed)?;
    let mut streams = BTreeMap::new();
    for (g, s) in geoms.iter().zip(&out.streams) {
        write_imu(&a.out.join(stream_file(g.role)), s)?;
        streams.insert(g.role, PathBuf::from(stream_file(g.role)));
    }
    write_trajectory(&a.out.join(TRUTH), &out.truth)?;
    let manifest = RunManifest {
        config_file: None,
        seed: Some(a.seed),
        topology: None,
        mode: None,
        out: None,
        truth: Some(PathBuf::from(TRUTH)),
        streams,
        config: Some(cfg),
    };
    write_toml(&a.out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Files written by [`run`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFiles {
    pub trajectory: PathBuf,
    pub subsystems: Vec<PathBuf>,
    pub diagnostics: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Serialize)]
struct UpdateSummary {
    count: usize,
    skipped: usize,
    mean_nis: f64,
    max_abs_innovation: f64,
}

#[derive(Debug, Serialize)]
struct EventRecord {
    t: f64,
    imu: String,
    message: String,
}

#[derive(Debug, Serialize)]
struct DiagnosticsFile {
    topology: Topology,
    mode: Mode,
    epochs: usize,
    covariance_checks: usize,
    us_per_epoch: f64,
    velocity: UpdateSummary,
    constraint: UpdateSummary,
    events: Vec<EventRecord>,
}

/// Manifest of a finished run: the inputs, every configuration value used,
/// and the outputs.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    input: &'a RunManifest,
    outputs: &'a RunFiles,
    config: &'a AppConfig,
}

fn summary(s: &fusion::UpdateStats) -> UpdateSummary {
    UpdateSummary { count: s.count, skipped: s.skipped, mean_nis: s.mean_nis(), max_abs_innovation: s.max_abs_innovation }
}

struct Loaded {
    cfg: AppConfig,
    manifest: RunManifest,
    streams: Vec<Vec<crate::model::ImuSample>>,
    dir: PathBuf,
}

fn load_run(manifest: &Path, config: Option<&Path>, topology: Option<Topology>, mode: Option<Mode>) -> Result<Loaded, CliError> {
    let (m, dir) = RunManifest::load(manifest)?;
    let file = config.map(Path::to_path_buf).or_else(|| m.config_file.as_ref().map(|p| dir.join(p)));
    let mut cfg = AppConfig::load(m.config.as_ref(), file.as_deref())?;
    if let Some(t) = topology.or(m.topology) {
        cfg.filter.topology = t;
    }
    if let Some(md) = mode.or(m.mode) {
        cfg.filter.mode = md;
    }
    cfg.validate()?;
    let paths = m.stream_paths(&dir, cfg.filter.topology)?;
    let streams = paths.iter().map(|p| read_imu(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(Loaded { cfg, manifest: m, streams, dir })
}

pub fn run(a: &RunArgs) -> Result<RunFiles, CliError> {
    let l = load_run(&a.manifest, a.config.as_deref(), a.topology, a.mode)?;
    let fc = l.cfg.fusion_config()?;
    let geoms = l.cfg.vehicle().for_topology(fc.topology);
    let out: RunOutput = fusion::run(&fc, &geoms, &l.streams)?;

    let dir = a.out.clone().or_else(|| l.manifest.out.as_ref().map(|p| l.dir.join(p))).unwrap_or_else(|| l.dir.clone());
    let stem = format!("{}_{}", fc.topology.name(), mode_name(fc.mode));
    let files = RunFiles {
        trajectory: dir.join(format!("trajectory_{stem}.csv")),
        subsystems: geoms.iter().map(|g| dir.join(format!("trajectory_{stem}_{}.csv", g.imu_id))).collect(),
        diagnostics: dir.join(format!("diagnostics_{stem}.toml")),
        manifest: dir.join(format!("run_{stem}.toml")),
    };
    write_trajectory(&files.trajectory, &out.trajectory)?;
    for (p, t) in files.subsystems.iter().zip(&out.subsystem_trajectories) {
        write_trajectory(p, t)?;
    }
    let d = &out.diagnostics;
    let diag = DiagnosticsFile {
        topology: fc.topology,
        mode: fc.mode,
        epochs: d.timing.epochs,
        covariance_checks: d.covariance_checks,
        us_per_epoch: d.timing.us_per_epoch(),
        velocity: summary(&d.velocity),
        constraint: summary(&d.constraint),
        events: d.events.iter().map(|e| EventRecord { t: e.t, imu: e.imu.clone(), message: e.message.clone() }).collect(),
    };
    write_toml(&files.diagnostics, &diag)?;
    write_toml(&files.manifest, &RunRecord { input: &l.manifest, outputs: &files, config: &l.cfg })?;
    Ok(files)
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Distributed => "distributed",
        Mode::Centralized => "centralized",
    }
}

#[derive(Debug, Serialize)]
struct DriftFile {
    estimate: PathBuf,
    truth: PathBuf,
    window_m: f64,
    distance_m: f64,
    mean_drift_rate_percent: f64,
    heading_rmse_deg: f64,
    max_vertical_error_m: f64,
    final_horizontal_error_m: f64,
}

#[derive(Debug, Serialize)]
struct WindowRow {
    distance_m: f64,
    drift_rate_percent: f64,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<DriftReport, CliError> {
    let est = read_trajectory(&a.est)?;
    let truth = read_trajectory(&a.truth)?;
    let report = eval::drift_rate(&est, &truth, a.window_l)?;
    let dir = a.out.clone().unwrap_or_else(|| a.est.parent().map(Path::to_path_buf).unwrap_or_default());
    let stem = a.est.file_stem().map_or_else(|| "estimate".into(), |s| s.to_string_lossy().into_owned());
    write_toml(
        &dir.join(format!("report_{stem}.toml")),
        &DriftFile {
            estimate: a.est.clone(),
            truth: a.truth.clone(),
            window_m: report.window,
            distance_m: report.distance,
            mean_drift_rate_percent: report.mean_rate,
            heading_rmse_deg: report.heading_rmse_deg,
            max_vertical_error_m: report.max_vertical_error,
            final_horizontal_error_m: report.final_horizontal_error,
        },
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (d, r) in report.distances.iter().zip(&report.rates) {
        w.serialize(WindowRow { distance_m: *d, drift_rate_percent: *r }).expect("in-memory csv write");
    }
    files::write_atomic(&dir.join(format!("windows_{stem}.csv")), &w.into_inner().expect("in-memory csv flush"))?;
    Ok(report)
}

#[derive(Debug, Serialize)]
struct BenchFile {
    hardware: String,
    optimized: bool,
    repetitions: usize,
    epochs: usize,
    ratio: f64,
    update_cost_exponent: f64,
    distributed: BTreeMap<&'static str, f64>,
    centralized: BTreeMap<&'static str, f64>,
}

fn timing_map(t: &eval::ModeTiming) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("us_per_velocity_update", t.us_per_velocity_update),
        ("us_per_constraint_update", t.us_per_constraint_update),
        ("us_per_propagation", t.us_per_propagation),
        ("us_per_epoch", t.us_per_epoch),
    ])
}

pub fn bench(a: &BenchArgs) -> Result<BenchReport, CliError> {
    let l = load_run(&a.manifest, a.config.as_deref(), Some(Topology::Triple), None)?;
    let fc = l.cfg.fusion_config()?;
    let geoms = l.cfg.vehicle().for_topology(Topology::Triple);
    let report = eval::bench(&fc, &geoms, &l.streams, a.repetitions)?;
    let dir = a.out.clone().unwrap_or_else(|| l.dir.clone());
    write_toml(
        &dir.join("bench.toml"),
        &BenchFile {
            hardware: report.hardware.clone(),
            optimized: report.optimized,
            repetitions: report.repetitions,
            epochs: report.epochs,
            ratio: report.ratio,
            update_cost_exponent: eval::update_cost_exponent(200),
            distributed: timing_map(&report.distributed),
            centralized: timing_map(&report.centralized),
        },
    )?;
    Ok(report)
}
