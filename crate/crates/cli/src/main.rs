mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use t2max::globaltest::Method;
use t2max::nullcal::DEFAULT_B;
use t2max::simharness::DEFAULT_HC_B;

/// Block-wise Hotelling T² global tests with Monte-Carlo calibrated maxima.
#[derive(Debug, Parser)]
#[command(name = "t2max", version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress details to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Directory holding cached null tables.
    #[arg(long, env = "T2MAX_CACHE_DIR")]
    cache_dir: Option<PathBuf>,

    /// Fail instead of simulating missing null tables.
    #[arg(long)]
    no_auto_build: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-block T² statistics and chi-squared p-values.
    T2 {
        dataset: PathBuf,
        /// Output CSV (block_id,d,t2,chisq_pvalue); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = dataset::DEFAULT_MAX_DIM)]
        max_dim: usize,
    },
    /// Build (or load) a null table and print its summary.
    Calibrate {
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        n2: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = DEFAULT_B)]
        b: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        tables: TableArgs,
    },
    /// Global test of one dataset.
    Test {
        dataset: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Null-table size.
        #[arg(long, default_value_t = DEFAULT_B)]
        b: u64,
        /// Seed of the null tables and the HC* critical value.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo size of the HC* critical value.
        #[arg(long, default_value_t = DEFAULT_HC_B)]
        hc_b: u64,
        /// Output JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = dataset::DEFAULT_MAX_DIM)]
        max_dim: usize,
        #[command(flatten)]
        tables: TableArgs,
    },
    /// Size or power sweep from a run config or a built-in preset.
    Simulate {
        #[arg(long, required_unless_present_any = ["preset", "list_presets"], conflicts_with = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        list_presets: bool,
        /// Output stem; writes `<out>.csv` and `<out>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tables: TableArgs,
    },
    /// Simulated T² tail over the chi-squared tail on a grid.
    Mdcheck {
        #[arg(long)]
        n1: usize,
        #[arg(long)]
        n2: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        reps: u64,
        /// Comma-separated x² values.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Comma-separated chi-squared upper-tail levels, converted to x².
        #[arg(long, value_delimiter = ',')]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(commands::EXIT_USAGE);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
