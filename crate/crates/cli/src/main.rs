//! Command-line driver: benchmark generation, discovery, baselines,
//! validation, noise sweeps and run summaries.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for a run that completed but recovered the wrong structure.
pub const EXIT_STRUCTURE: u8 = 2;
/// Exit status for a numerical abort (blow-up, degenerate library).
pub const EXIT_NUMERICAL: u8 = 3;
/// Exit status for bad flags, configs or unreadable inputs.
pub const EXIT_CONFIG: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "bgsindy", version, about = "Balance-guided sparse identification of PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a benchmark PDE and write the dataset.
    Generate(GenerateArgs),
    /// Run balance-guided pruning on a dataset.
    Discover(DiscoverArgs),
    /// Run a coefficient-thresholding baseline on a dataset.
    Baseline(BaselineArgs),
    /// Score discovered models against reference equations and data.
    Validate(ValidateArgs),
    /// Coefficient error over a grid of noise levels and sample counts.
    Sweep(SweepArgs),
    /// Summarise a discovery run directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// kdv, burgers-hyper, modified-ks or rd2d.
    benchmark: String,
    /// Benchmark config JSON; defaults for the benchmark when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Dataset base name inside `out`; the benchmark name by default.
    #[arg(long)]
    name: Option<String>,
    /// Overrides the config's small parameter.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Overrides the config's final time.
    #[arg(long)]
    t_end: Option<f64>,
    /// Use the full reference grid instead of the reduced default.
    #[arg(long)]
    full_resolution: bool,
}

/// Discovery settings shared by `discover`, `baseline` and `sweep`. Flags
/// override the config file, which overrides the benchmark preset.
#[derive(Args, Debug, Clone)]
struct DiscoveryArgs {
    /// Full discovery config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Library spec JSON replacing the config's library.
    #[arg(long)]
    library_spec: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum StrategyArg {
    All,
    UniformRandom,
    LatinHypercube,
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    /// Dataset path (header `.json`, payload `.bin` alongside).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    discovery: DiscoveryArgs,
    #[arg(long)]
    out: PathBuf,
    /// Skip forward integration when the data carries reference equations.
    #[arg(long)]
    no_integrate: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Method {
    Stlsq,
    Stridge,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    /// Method parameters JSON (threshold for stlsq, ridge settings for stridge).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Shortcut for the stlsq threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[command(flatten)]
    discovery: DiscoveryArgs,
    /// Output directory; models go to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Model JSON, or a discovery `report.json`; repeat for coupled systems.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Reference dataset.
    #[arg(long)]
    reference: PathBuf,
    /// Reference equations; taken from the dataset's benchmark record when absent.
    #[arg(long)]
    reference_model: Vec<PathBuf>,
    #[arg(long)]
    no_integrate: bool,
    /// Where to write the validation JSON; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Dataset to corrupt; the benchmark is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "kdv")]
    benchmark: String,
    /// Noise amplitudes as `start:stop:count` or a comma list.
    #[arg(long, default_value = "0:0.25:6")]
    noise: String,
    /// Comma-separated sample counts.
    #[arg(long, default_value = "1000,10000,100000")]
    samples: String,
    /// First seed; replicates use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    replicates: u64,
    #[arg(long, default_value = "u")]
    field: String,
    /// Discovery config JSON; the benchmark preset with denoising otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
}

/// Failure carrying the process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<bgsindy::Error> for Failure {
    fn from(e: bgsindy::Error) -> Self {
        use bgsindy::Error as E;
        let code = match e {
            E::Instability { .. } | E::DegenerateLibrary(_) | E::NonFinite(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::config(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::config(e.to_string())
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("BGSINDY_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("BGSINDY_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_threads().and_then(|_| match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Discover(a) => commands::discover(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Validate(a) => commands::validate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
