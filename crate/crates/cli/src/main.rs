use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use graphbench_core::adapter::AdapterManifest;
use graphbench_core::agent::{AgentConfig, AgentDaemon, SystemCpuMonitor};
use graphbench_core::analysis::{analyze, AnalyzeOptions, GroupKey, Metric};
use graphbench_core::archive::{read_archive, write_archive};
use graphbench_core::config::{parse_plan, ConfigError};
use graphbench_core::coordinator::{Coordinator, CoordinatorConfig, RunOutcome};
use graphbench_core::metrics::{BatchBucket, Pooling};
use graphbench_core::model::ExperimentPlan;
use graphbench_core::report::{write_report, ReportFormat};

const EXIT_INVALID: u8 = 2;
const EXIT_UNREADABLE: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "graphbench", version, about = "Distributed benchmark orchestration for NN graph compilers")]
struct Cli {
    /// Experiment plan (YAML).
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    /// Results archive (JSON; gzip-compressed when the name ends in .gz).
    #[arg(long, global = true)]
    archive: Option<PathBuf>,
    /// Output directory for reports.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// error, warn, info, debug or trace; or a full tracing filter.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StateArgs {
    /// Where journals, result stores and checkpoints live.
    #[arg(long, env = "GRAPHBENCH_STATE_DIR", default_value = ".graphbench")]
    state_dir: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    state: StateArgs,
    /// Connection attempts per device before it is marked failed.
    #[arg(long, default_value_t = 3)]
    reconnect_attempts: u32,
    /// Seconds between connection attempts.
    #[arg(long, default_value_t = 2.0)]
    reconnect_delay: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plan; exit 0 if valid, 2 if invalid, 3 if unreadable.
    Validate,
    /// Deploy a plan to its devices and collect results into an archive.
    Run(RunArgs),
    /// Continue a run after a coordinator restart.
    Resume(RunArgs),
    /// Serve benchmark tasks on this device.
    Agent {
        /// Address to listen on.
        #[arg(long, default_value = "0.0.0.0:7878")]
        listen: String,
        #[command(flatten)]
        state: StateArgs,
        /// JSON map of compiler id to adapter command.
        #[arg(long)]
        adapters_manifest: PathBuf,
    },
    /// Compute metric tables from an archive.
    Analyze {
        /// Comma-separated metrics; default is every computable metric.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<Metric>,
        /// Pool throughput, CPU and compile rows by these keys.
        #[arg(long, value_delimiter = ',')]
        group_by: Vec<GroupKey>,
        /// Batch buckets for `--group-by bucket`, e.g. `1,2-4,8-32`.
        #[arg(long, value_delimiter = ',', value_parser = parse_bucket)]
        buckets: Vec<BatchBucket>,
        #[arg(long, value_enum, default_value_t = PoolingArg::Samples)]
        pooling: PoolingArg,
        #[arg(long, value_enum, default_value_t = TableFormat::Table)]
        format: TableFormat,
    },
    /// Write CSV, JSON or SVG report files to --out-dir.
    Report {
        /// csv, json or svg.
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    /// Pool every repetition sample.
    Samples,
    /// One value per record.
    Means,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Table,
    Csv,
    Json,
}

fn parse_bucket(s: &str) -> Result<BatchBucket, String> {
    BatchBucket::parse(s).ok_or_else(|| format!("`{s}` is not a batch bucket like 4 or 2-8"))
}

/// An error that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "exit {}", self.0)
    }
}

impl std::error::Error for Exit {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if let Some(Exit(code)) = e.downcast_ref::<Exit>() {
                return ExitCode::from(*code);
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match value {
        Some(p) => Ok(p),
        None => {
            eprintln!("error: --{flag} is required for this command");
            Err(Exit(EXIT_INVALID).into())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Validate => {
            load_plan(require(&cli.plan, "plan")?)?;
            Ok(0)
        }
        Command::Run(args) => {
            let plan = load_plan(require(&cli.plan, "plan")?)?;
            let archive = require(&cli.archive, "archive")?;
            let outcome = coordinator(args).run_plan(&plan)?;
            finish_run(outcome, archive)
        }
        Command::Resume(args) => {
            let plan = load_plan(require(&cli.plan, "plan")?)?;
            let archive = require(&cli.archive, "archive")?;
            let outcome = coordinator(args).resume_plan(&plan)?;
            finish_run(outcome, archive)
        }
        Command::Agent { listen, state, adapters_manifest } => {
            let manifest = AdapterManifest::load(adapters_manifest)?;
            fs::create_dir_all(&state.state_dir)
                .with_context(|| format!("creating {}", state.state_dir.display()))?;
            let config = AgentConfig::new(&state.state_dir, Arc::new(manifest), Arc::new(SystemCpuMonitor));
            let daemon = AgentDaemon::bind(listen.as_str(), config).with_context(|| format!("binding {listen}"))?;
            eprintln!("agent listening on {}", daemon.local_addr()?);
            daemon.serve()?;
            Ok(0)
        }
        Command::Analyze { metrics, group_by, buckets, pooling, format } => {
            let archive = read_archive(require(&cli.archive, "archive")?)?;
            let opts = AnalyzeOptions {
                metrics: metrics.clone(),
                group_by: group_by.clone(),
                buckets: buckets.clone(),
                pooling: match pooling {
                    PoolingArg::Samples => Pooling::FlattenSamples,
                    PoolingArg::Means => Pooling::RecordMeans,
                },
            };
            let analysis = analyze(&archive, &opts)?;
            let text = match format {
                TableFormat::Table => analysis.to_table(),
                TableFormat::Csv => analysis.to_csv(),
                TableFormat::Json => analysis.to_json(),
            };
            print!("{text}");
            Ok(0)
        }
        Command::Report { format } => {
            let format: ReportFormat = match format.parse() {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Err(Exit(EXIT_INVALID).into());
                }
            };
            let archive = read_archive(require(&cli.archive, "archive")?)?;
            let out_dir = require(&cli.out_dir, "out-dir")?;
            for path in write_report(&archive, format, &AnalyzeOptions::default(), out_dir)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn load_plan(path: &Path) -> Result<ExperimentPlan> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(Exit(EXIT_UNREADABLE).into());
        }
    };
    match parse_plan(&text) {
        Ok(plan) => Ok(plan),
        Err(ConfigError::Validation(v)) => {
            for violation in &v.violations {
                eprintln!("{}: {violation}", path.display());
            }
            Err(Exit(EXIT_INVALID).into())
        }
        Err(e) => {
            eprintln!("{}: {e}", path.display());
            Err(Exit(EXIT_INVALID).into())
        }
    }
}

fn coordinator(args: &RunArgs) -> Coordinator {
    Coordinator::new(CoordinatorConfig {
        state_dir: Some(args.state.state_dir.clone()),
        reconnect_attempts: args.reconnect_attempts,
        reconnect_delay: Duration::from_secs_f64(args.reconnect_delay.max(0.0)),
        ..CoordinatorConfig::default()
    })
}

fn finish_run(outcome: RunOutcome, archive: &Path) -> Result<u8> {
    write_archive(archive, &outcome.archive)?;
    eprintln!(
        "{} records, {} failed tasks written to {}",
        outcome.archive.records.len(),
        outcome.archive.failures.len(),
        archive.display()
    );
    for c in &outcome.conflicts {
        eprintln!("conflict: {} from {}: {}", c.task_id, c.device_id, c.reason);
    }
    if outcome.is_partial() {
        for (device, cause) in &outcome.device_failures {
            eprintln!("device {device} failed: {cause}");
        }
        return Ok(EXIT_PARTIAL);
    }
    if outcome.archive.records.is_empty() && !outcome.archive.failures.is_empty() {
        bail!("no task produced a result");
    }
    Ok(0)
}
