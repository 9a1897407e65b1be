//! The `straightflow` command-line front end.
//!
//! Exit codes: 0 success (or a consistent verdict), 1 runtime failure,
//! 2 configuration error, 3 capability error, 4 violated verdict,
//! 5 inconclusive verdict.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    BandwidthRule, BandwidthSetting, ExperimentConfig, FlowConfig, GridConfig, Source, SweepConfig,
    SweepMetric, Theorem, Tolerances, VerifySettings,
};
pub use output::{sha256_hex, RunManifest, CONFIG_FILE, MANIFEST_FILE};

use crate::error::Error;
use crate::flow::Scheme;
use crate::verify::Verdict;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Capability(String),
    Runtime(String),
    Verdict(Verdict),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Capability(_) => 3,
            CliError::Verdict(Verdict::Violated) => 4,
            CliError::Verdict(Verdict::Inconclusive) => 5,
            CliError::Verdict(Verdict::Consistent) => 0,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Unsupported(_) => CliError::Capability(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "straightflow", version, about = "Straightness diagnostics for stochastic interpolants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample size.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a path ensemble.
    Simulate(Common),
    /// Tabulate ρ, v, a, Σ and Π on a grid.
    Fields {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        source: Option<Source>,
        #[arg(long)]
        time: Option<f64>,
    },
    /// Continuity, momentum, balance and material-derivative residuals.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        source: Option<Source>,
        #[arg(long)]
        time: Option<f64>,
    },
    /// Run a theorem check and exit with its verdict.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        theorem: Option<Theorem>,
    },
    /// Integrate the probability flow and measure straightness.
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        source: Option<Source>,
        /// File of start points, one comma-separated row per point.
        #[arg(long, conflicts_with = "grid")]
        points: Option<PathBuf>,
        /// Start points on a regular grid.
        #[arg(long)]
        grid: bool,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<Scheme>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Recompute metrics over a parameter sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long)]
        values: Option<String>,
    },
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown scheme '{s}' (expected euler, midpoint or rk4)"))
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("STRAIGHTFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("STRAIGHTFLOW_THREADS must be a positive integer, got '{raw}'")))?;
    // a pool may already exist when embedded; that is not an error
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| CliError::Config(format!("reading {}: {e}", common.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.n {
        cfg.n = n;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(common) => {
            let cfg = load(&common)?;
            commands::simulate(&cfg)
        }
        Command::Fields { common, source, time } => {
            let mut cfg = load(&common)?;
            cfg.source = source.unwrap_or(cfg.source);
            cfg.time = time.unwrap_or(cfg.time);
            commands::fields(&cfg)
        }
        Command::Diagnose { common, source, time } => {
            let mut cfg = load(&common)?;
            cfg.source = source.unwrap_or(cfg.source);
            cfg.time = time.unwrap_or(cfg.time);
            commands::diagnose(&cfg)
        }
        Command::Verify { common, theorem } => {
            let mut cfg = load(&common)?;
            cfg.theorem = theorem.unwrap_or(cfg.theorem);
            commands::verify(&cfg)
        }
        Command::Flow {
            common,
            source,
            points,
            grid,
            scheme,
            steps,
        } => {
            let mut cfg = load(&common)?;
            cfg.source = source.unwrap_or(cfg.source);
            cfg.flow.scheme = scheme.unwrap_or(cfg.flow.scheme);
            cfg.flow.steps = steps.unwrap_or(cfg.flow.steps);
            if let Some(path) = points {
                cfg.flow.points = Some(commands::read_points(&path)?);
            }
            if grid {
                cfg.flow.points = None;
                cfg.flow.grid_points = true;
            }
            commands::flow(&cfg)
        }
        Command::Sweep {
            common,
            param,
            values,
        } => {
            let mut cfg = load(&common)?;
            if param.is_some() || values.is_some() {
                let base = cfg.sweep.take();
                let param = param
                    .or_else(|| base.as_ref().map(|s| s.param.clone()))
                    .ok_or_else(|| CliError::Config("sweep needs --param".into()))?;
                let values = match values {
                    Some(v) => commands::parse_values(&v)?,
                    None => base.as_ref().map(|s| s.values.clone()).unwrap_or_default(),
                };
                let metrics = base.map_or_else(
                    || vec![SweepMetric::VRmse, SweepMetric::TracePi],
                    |s| s.metrics,
                );
                cfg.sweep = Some(SweepConfig {
                    param,
                    values,
                    metrics,
                });
            }
            commands::sweep(&cfg)
        }
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
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Verdict(v)) => CliError::Verdict(v).exit_code(),
        Err(e) => {
            let (kind, msg) = match &e {
                CliError::Config(m) => ("configuration error", m),
                CliError::Capability(m) => ("unsupported", m),
                CliError::Runtime(m) => ("error", m),
                CliError::Verdict(_) => unreachable!(),
            };
            eprintln!("straightflow: {kind}: {msg}");
            e.exit_code()
        }
    }
}
