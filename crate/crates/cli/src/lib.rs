//! The `decsolve` command line: solve, simulate, master, slave, gen-problem
//! and report.
//!
//! Exit codes: 0 converged (or the command succeeded), 1 runtime failure,
//! 2 generation limit reached without convergence, 3 cluster run aborted,
//! 64 usage error.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::info;

use decsolve::cluster::{self, with_default_port, ClusterConfig};
use decsolve::engine::EngineError;
use decsolve::metrics::{self, ReportFormat, RunRecord};
use decsolve::problem::{save_system, LinearSystem, ProblemError};
use decsolve::rng::{RngStream, PROBLEM_STREAM};
use decsolve::{run_solver, Family, ProblemSpec, SolveResult, Topology};

pub use config::{RunArgs, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_ABORTED: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// A bad flag or flag combination, caught before any work or output.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid value for {flag}: {message}")]
pub struct UsageError {
    pub flag: String,
    pub message: String,
}

impl UsageError {
    pub fn new(flag: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            flag: flag.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Usage(#[from] UsageError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Failure {
    fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Engine(EngineError::Cluster(_)) => EXIT_ABORTED,
            _ => EXIT_FAILURE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "decsolve", version, about = "Distributed evolutionary Jacobi-SR solver for Ax = b")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve in a single process.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Check that the population would split over this many slaves.
        #[arg(long)]
        slaves: Option<usize>,
    },
    /// Solve on an in-process virtual cluster.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Number of virtual slaves (default 5).
        #[arg(long)]
        slaves: Option<usize>,
    },
    /// Run the master of a TCP cluster.
    Master {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        net: NetArgs,
        /// Address to listen on.
        #[arg(long, value_name = "HOST:PORT")]
        listen: String,
        /// Slaves to wait for before starting.
        #[arg(long, value_name = "M")]
        expect: Option<usize>,
    },
    /// Run a slave that serves a master until told to stop.
    Slave {
        #[command(flatten)]
        net: NetArgs,
        /// Master address.
        #[arg(long, value_name = "HOST:PORT")]
        connect: String,
    },
    /// Write a benchmark system to a problem file.
    GenProblem {
        /// Problem family p1..p6.
        #[arg(long, value_name = "FAMILY", default_value = "p1")]
        problem: Family,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = config::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        dominant: bool,
        /// Destination; stdout when omitted.
        #[arg(short, long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Merge JSON reports and compute speedups against the single-process run.
    Report {
        /// JSON reports written by solve, simulate or master.
        #[arg(required = true, value_name = "REPORT")]
        inputs: Vec<PathBuf>,
        #[arg(short, long, value_name = "PATH")]
        output: Option<PathBuf>,
        #[arg(long)]
        format: Option<ReportFormat>,
    },
}

#[derive(Debug, Clone, Args)]
struct NetArgs {
    /// Seconds to wait for registration.
    #[arg(long, value_name = "SECS", default_value_t = cluster::DEFAULT_HANDSHAKE_TIMEOUT.as_secs_f64())]
    handshake_timeout: f64,
    /// Seconds to wait for a generation's answers.
    #[arg(long, value_name = "SECS", default_value_t = cluster::DEFAULT_GATHER_TIMEOUT.as_secs_f64())]
    gather_timeout: f64,
}

impl NetArgs {
    fn durations(&self) -> Result<(Duration, Duration), UsageError> {
        let d = |flag: &str, v: f64| {
            Duration::try_from_secs_f64(v)
                .ok()
                .filter(|d| !d.is_zero())
                .ok_or_else(|| UsageError::new(flag, format!("{v} is not a positive number of seconds")))
        };
        Ok((
            d("--handshake-timeout", self.handshake_timeout)?,
            d("--gather-timeout", self.gather_timeout)?,
        ))
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn execute<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .try_init();
}

fn dispatch(command: Command) -> Result<i32, Failure> {
    match command {
        Command::Solve { run, slaves } => {
            let cfg = run.resolve()?;
            if let Some(m) = slaves {
                Topology::Virtual { slaves: m }
                    .validate(cfg.params.pop_size)
                    .map_err(|e| UsageError::new("--slaves", format!("{e} (--pop {})", cfg.params.pop_size)))?;
            }
            let cfg = RunConfig {
                topology: Topology::Single,
                ..cfg
            };
            solve(cfg, run.label.clone(), None)
        }
        Command::Simulate { run, slaves } => {
            let cfg = run.resolve()?;
            let slaves = slaves.unwrap_or(match cfg.topology {
                Topology::Virtual { slaves } => slaves,
                _ => config::DEFAULT_SLAVES,
            });
            let cfg = RunConfig {
                topology: Topology::Virtual { slaves },
                ..cfg
            };
            solve(cfg, run.label.clone(), None)
        }
        Command::Master {
            run,
            net,
            listen,
            expect,
        } => {
            let cfg = run.resolve()?;
            let (hs, gather) = net.durations()?;
            let slaves = expect.unwrap_or(match cfg.topology {
                Topology::Network { slaves, .. } => slaves,
                _ => config::DEFAULT_SLAVES,
            });
            let listen = with_default_port(&listen);
            let cluster = ClusterConfig::master(listen.clone(), slaves).with_timeouts(hs, gather);
            let cfg = RunConfig {
                topology: Topology::Network { listen, slaves },
                ..cfg
            };
            solve(cfg, run.label.clone(), Some(cluster))
        }
        Command::Slave { net, connect } => {
            let (hs, gather) = net.durations()?;
            let config = ClusterConfig::slave(with_default_port(&connect)).with_timeouts(hs, gather);
            cluster::slave_run(&config)?;
            Ok(EXIT_OK)
        }
        Command::GenProblem {
            problem,
            n,
            seed,
            dominant,
            output,
        } => {
            if problem == Family::File {
                return Err(UsageError::new("--problem", "gen-problem needs a generated family (p1..p6)").into());
            }
            if n < 2 {
                return Err(UsageError::new("--n", format!("dimension {n} must be at least 2")).into());
            }
            let mut spec = ProblemSpec::new(problem, n, seed);
            spec.ensure_dominance = dominant;
            let sys = build_system(&spec)?;
            match output {
                Some(path) => save_system(&sys, path)?,
                None => std::io::stdout().write_all(sys.to_json().as_bytes())?,
            }
            Ok(EXIT_OK)
        }
        Command::Report {
            inputs,
            output,
            format,
        } => {
            let mut records = Vec::new();
            for path in &inputs {
                records.extend(metrics::load_report(path).map_err(|e| {
                    std::io::Error::other(format!("{}: {e} (inputs must be JSON reports)", path.display()))
                })?);
            }
            let format = format.unwrap_or_else(|| config::format_for(output.as_deref()));
            write_report(&records, output.as_ref(), format)?;
            Ok(EXIT_OK)
        }
    }
}

pub fn build_system(spec: &ProblemSpec) -> Result<LinearSystem, ProblemError> {
    spec.build(&mut RngStream::new(spec.seed, PROBLEM_STREAM))
}

fn default_label(topology: &Topology) -> String {
    match topology {
        Topology::Single => "single".into(),
        other => format!("{}-{}", other.name(), other.slave_count()),
    }
}

fn solve(cfg: RunConfig, label: Option<String>, cluster: Option<ClusterConfig>) -> Result<i32, Failure> {
    config::validate(&cfg)?;
    let sys = build_system(&cfg.problem)?;
    info!(
        "solving {} n={} with {} on {}",
        cfg.problem.family,
        sys.n(),
        cfg.params.selection,
        default_label(&cfg.topology)
    );
    let result = match &cluster {
        Some(cc) => cluster::master_run(&sys, &cfg.params, cc, cfg.seed)?,
        None => run_solver(&sys, &cfg.params, &cfg.topology, cfg.seed)?,
    };
    let record = RunRecord {
        label: label.unwrap_or_else(|| default_label(&cfg.topology)),
        topology: cfg.topology.name().to_string(),
        slaves: cfg.topology.slave_count(),
        selection: cfg.params.selection,
        seed: cfg.seed,
        config: cfg.to_value(),
        result,
    };
    write_report(std::slice::from_ref(&record), cfg.output.as_ref(), cfg.format)?;
    summarize(&record.result);
    Ok(if record.result.aborted() {
        EXIT_ABORTED
    } else if record.result.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn write_report(records: &[RunRecord], path: Option<&PathBuf>, format: ReportFormat) -> Result<(), Failure> {
    match path {
        Some(path) => metrics::emit_report(records, path, format)?,
        None => {
            let report = metrics::build_report(records)?;
            let text = match format {
                ReportFormat::Csv => metrics::render_csv(&report)?,
                ReportFormat::Json => metrics::render_json(&report)?,
            };
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    Ok(())
}

fn summarize(r: &SolveResult) {
    let state = if let Some(abort) = &r.abort {
        format!("aborted ({})", abort.message)
    } else if r.converged {
        "converged".into()
    } else {
        "not converged".into()
    };
    eprintln!(
        "{state} after {} generations: error {:e}, omega {:.6}",
        r.generations, r.champion_error, r.omega_at_convergence
    );
}

/// Reads a config file back from a report written by this tool.
pub fn config_from_report(path: &std::path::Path) -> Result<Vec<RunConfig>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    if let Ok(records) = metrics::load_report(path) {
        return records
            .into_iter()
            .map(|r| serde_json::from_value(r.config).map_err(|e| e.to_string()))
            .collect();
    }
    text.lines()
        .filter_map(|l| l.strip_prefix("# config["))
        .filter_map(|l| l.split_once("]="))
        .map(|(_, json)| serde_json::from_str(json).map_err(|e| e.to_string()))
        .collect()
}
