//! Command-line harness: manifest validation, one-shot plans, simulation
//! scenarios and synthetic ladder generation.

pub mod spec;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use cqstream::controller::{ControllerConfig, ControllerKind};
use cqstream::dp::{plan, BufferGrid, FinalBuffer, PlanError, PlanRequest};
use cqstream::ladder::{
    gen_synthetic_ladder, load_manifest, ComplexityProfile, LadderError, SegmentLadder,
};
use cqstream::sim::{
    compute_pooled_metrics, run_shared, BandwidthTrace, ClientSession, SimError, SimReport,
};
use cqstream::utility::Objective;

use spec::{ExperimentSpec, LadderSource, TraceSource};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input, invalid ladder, or an infeasible plan.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<LadderError> for CliError {
    fn from(e: LadderError) -> Self {
        match e {
            LadderError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "cqstream",
    version,
    about = "Consistent-quality rate adaptation experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a ladder manifest.
    Validate { manifest: PathBuf },
    /// Solve one planning problem and print the plan as CSV.
    Plan(PlanArgs),
    /// Run the scenarios of an experiment spec.
    Simulate(SimulateArgs),
    /// Write a synthetic CBR ladder manifest.
    GenLadder(GenLadderArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub b_init: f64,
    /// Target final buffer; without it the best final buffer is taken.
    #[arg(long)]
    pub b_final: Option<f64>,
    #[arg(long)]
    pub bl: f64,
    #[arg(long)]
    pub bh: f64,
    /// Number of buffer bins.
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long)]
    pub w_bps: f64,
    /// Steps to plan; defaults to every segment from `--start`.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// First segment of the window.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// `max-mean`, `max-min` or `alpha:<a>`, optionally with `+switch:<delta>`.
    #[arg(long, default_value = "max-mean")]
    pub objective: Objective,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub spec: PathBuf,
    /// Output directory; overrides the spec and the environment.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Run independent scenarios on separate threads.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct GenLadderArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub segments: usize,
    #[arg(long, default_value_t = 2.0)]
    pub tau: f64,
    /// Comma-separated bitrates in kbps.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "400,600,800,1200,1600,2400,3200"
    )]
    pub rates_kbps: Vec<f64>,
    #[arg(long)]
    pub theta_bps: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma2_min: Option<f64>,
    #[arg(long)]
    pub sigma2_max: Option<f64>,
    /// Write here instead of standard output.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Default output directory for `simulate`.
pub const OUT_DIR_ENV: &str = "CQSTREAM_OUT_DIR";

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { manifest } => cmd_validate(&manifest, out),
        Command::Plan(args) => cmd_plan(&args, out),
        Command::Simulate(args) => {
            let env_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
            cmd_simulate(&args, env_dir, out)
        }
        Command::GenLadder(args) => cmd_gen_ladder(&args, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Io(format!("writing output: {e}")))
}

pub fn cmd_validate(manifest: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let ladder = load_manifest(manifest)?;
    emit(
        out,
        &format!(
            "ok: {} segments, {} levels, tau {} s, quality {}\n",
            ladder.len(),
            ladder.num_levels(),
            ladder.tau(),
            ladder.convention()
        ),
    )
}

pub fn cmd_plan(args: &PlanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ladder = load_manifest(&args.manifest)?;
    args.objective
        .validate(ladder.convention())
        .map_err(|e| CliError::Invalid(e.to_string()))?;
    if args.start >= ladder.len() {
        return Err(CliError::Invalid(format!(
            "start segment {} is past the last segment ({})",
            args.start,
            ladder.len() - 1
        )));
    }
    let available = ladder.len() - args.start;
    let horizon = args.horizon.unwrap_or(available);
    if horizon == 0 || horizon > available {
        return Err(CliError::Invalid(format!(
            "horizon {horizon} must lie in 1..={available}"
        )));
    }
    let request = PlanRequest {
        b_init: args.b_init,
        b_final: args.b_final.map_or(FinalBuffer::Free, FinalBuffer::Target),
        grid: BufferGrid::new(args.bl, args.bh, args.k)?,
        tau: ladder.tau(),
        bandwidth_bps: args.w_bps,
        window: ladder.window(args.start, horizon),
        objective: args.objective,
        prev_level: None,
    };
    let result = plan(&request)?;
    let mut text = String::from("step,level,bitrate_bps,quality,buffer_after\n");
    for m in 0..result.levels.len() {
        writeln!(
            text,
            "{},{},{},{},{}",
            args.start + m,
            result.levels[m],
            result.bitrates[m],
            result.qualities[m],
            result.trajectory[m + 1]
        )
        .unwrap();
    }
    writeln!(
        text,
        "# achieved_utility={},b_offset={}",
        result.achieved_utility, result.b_offset
    )
    .unwrap();
    emit(out, &text)
}

pub fn cmd_gen_ladder(args: &GenLadderArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut profile = ComplexityProfile::default();
    if let Some(v) = args.theta_bps {
        profile.theta_bps = v;
    }
    if let Some(v) = args.gamma {
        profile.gamma = v;
    }
    if let Some(v) = args.sigma2_min {
        profile.sigma2_range.0 = v;
    }
    if let Some(v) = args.sigma2_max {
        profile.sigma2_range.1 = v;
    }
    let rates: Vec<f64> = args.rates_kbps.iter().map(|r| r * 1e3).collect();
    let ladder = gen_synthetic_ladder(args.seed, args.segments, args.tau, &rates, &profile)?;
    match &args.out {
        Some(path) => {
            ladder.write_manifest(path)?;
            emit(out, &format!("wrote {}\n", path.display()))
        }
        None => emit(out, &ladder.to_manifest()),
    }
}

/// One simulation run: a controller, optionally at one sweep value.
#[derive(Debug, Clone, Copy)]
struct Job {
    controller: ControllerKind,
    sweep_value: Option<f64>,
}

struct JobResult {
    job: Job,
    reports: Vec<SimReport>,
}

fn load_ladder(source: &LadderSource) -> Result<SegmentLadder, CliError> {
    Ok(match source {
        LadderSource::Manifest(path) => load_manifest(path)?,
        LadderSource::Synthetic {
            seed,
            segments,
            tau,
            rates_bps,
            profile,
        } => gen_synthetic_ladder(*seed, *segments, *tau, rates_bps, profile)?,
    })
}

fn load_trace(source: &TraceSource) -> Result<BandwidthTrace, CliError> {
    Ok(match source {
        TraceSource::File(path) => BandwidthTrace::load(path)?,
        TraceSource::Inline { points, end } => BandwidthTrace::new(points.clone(), *end)?,
    })
}

fn job_config(spec: &ExperimentSpec, job: Job, tau: f64) -> Result<ControllerConfig, CliError> {
    let mut cfg = ControllerConfig::for_kind(job.controller);
    // segment duration follows the ladder unless overridden
    cfg.tau = tau;
    for (k, v) in &spec.overrides {
        cfg.set(k, v).map_err(CliError::Invalid)?;
    }
    if let (Some(sweep), Some(value)) = (&spec.sweep, job.sweep_value) {
        cfg.set(&sweep.key, &value.to_string())
            .map_err(CliError::Invalid)?;
    }
    cfg.validate_for(job.controller)
        .map_err(|e| CliError::Invalid(format!("{} config: {e}", job.controller)))?;
    Ok(cfg)
}

fn run_job(
    spec: &ExperimentSpec,
    ladder: &SegmentLadder,
    trace: &BandwidthTrace,
    job: Job,
) -> Result<JobResult, CliError> {
    let cfg = job_config(spec, job, ladder.tau())?;
    let sessions: Vec<ClientSession<'_>> = spec
        .clients
        .iter()
        .map(|c| ClientSession {
            controller: job.controller,
            ladder,
            start_segment: c.start_segment,
            startup_buffer: c.startup_buffer,
        })
        .collect();
    let reports = run_shared(&sessions, trace, &spec.objective, &cfg)?;
    Ok(JobResult { job, reports })
}

/// Runs every job and renders the output files, without touching the disk.
fn simulate_outputs(
    spec: &ExperimentSpec,
    parallel: bool,
) -> Result<Vec<(String, String)>, CliError> {
    let ladder = load_ladder(&spec.ladder)?;
    let trace = load_trace(&spec.trace)?;
    for c in &spec.clients {
        if c.start_segment >= ladder.len() {
            return Err(CliError::Invalid(format!(
                "client start segment {} is past the ladder end ({} segments)",
                c.start_segment,
                ladder.len()
            )));
        }
    }
    let sweep_values: Vec<Option<f64>> = match &spec.sweep {
        Some(s) => s.values.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let jobs: Vec<Job> = spec
        .controllers
        .iter()
        .flat_map(|&controller| {
            sweep_values.iter().map(move |&sweep_value| Job {
                controller,
                sweep_value,
            })
        })
        .collect();

    let results: Vec<JobResult> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&job| {
                    let (ladder, trace) = (&ladder, &trace);
                    scope.spawn(move || run_job(spec, ladder, trace, job))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread panicked"))
                .collect::<Result<_, _>>()
        })?
    } else {
        jobs.iter()
            .map(|&job| run_job(spec, &ladder, &trace, job))
            .collect::<Result<_, _>>()?
    };

    let convention = ladder.convention();
    let mut files = Vec::new();
    match &spec.sweep {
        None => {
            let mut table = String::from("controller,metric,value\n");
            for r in &results {
                for (i, report) in r.reports.iter().enumerate() {
                    let stem = format!("{}_{}_client{}", spec.name, r.job.controller, i);
                    files.push((format!("{stem}.csv"), report.to_csv()));
                    files.push((format!("{stem}_summary.txt"), report.summary_kv()));
                }
                if let Ok(m) = compute_pooled_metrics(&r.reports, convention) {
                    for (metric, value) in m.entries() {
                        let value = value.map_or("NA".to_string(), |v| v.to_string());
                        writeln!(table, "{},{metric},{value}", r.job.controller).unwrap();
                    }
                }
            }
            files.push((format!("{}_comparison.csv", spec.name), table));
        }
        Some(sweep) => {
            let mut table = format!(
                "controller,{},mean_quality,psnr_p5,min_buffer,max_buffer,stall_total\n",
                sweep.key
            );
            for r in &results {
                let value = r.job.sweep_value.expect("sweep job");
                match compute_pooled_metrics(&r.reports, convention) {
                    Ok(m) => writeln!(
                        table,
                        "{},{value},{},{},{},{},{}",
                        r.job.controller,
                        m.mean_quality,
                        m.psnr_p5.map_or("NA".to_string(), |v| v.to_string()),
                        m.min_buffer,
                        m.max_buffer,
                        m.stall_total
                    )
                    .unwrap(),
                    Err(_) => {
                        writeln!(table, "{},{value},NA,NA,NA,NA,NA", r.job.controller).unwrap()
                    }
                }
            }
            files.push((format!("{}_sweep.csv", spec.name), table));
        }
    }
    Ok(files)
}

/// Writes all files or none: on failure, files already written are removed.
fn write_all_or_nothing(dir: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, content) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(io_err(&path, e));
        }
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_simulate(
    args: &SimulateArgs,
    env_dir: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let spec = ExperimentSpec::load(&args.spec)?;
    let dir = args
        .out_dir
        .clone()
        .or_else(|| spec.output.clone())
        .or(env_dir)
        .unwrap_or_else(|| PathBuf::from("."));
    let files = simulate_outputs(&spec, args.parallel)?;
    let written = write_all_or_nothing(&dir, &files)?;
    let mut text = String::new();
    for p in written {
        writeln!(text, "wrote {}", p.display()).unwrap();
    }
    emit(out, &text)
}
