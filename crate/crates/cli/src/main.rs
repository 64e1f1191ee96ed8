//! `selbias`: propensity weights for convenience samples.
//!
//! ```text
//! selbias balance  --config run.toml
//! selbias estimate --config run.toml
//! selbias simulate [--config sim.toml] [--methods logistic,cbps] [--n-sims 200]
//! ```
//!
//! Errors are printed to stderr as one JSON object `{"kind", "message"}`; the
//! exit code is 2 for configuration and usage errors and 1 otherwise.

mod balance;
mod config;
mod error;
mod estimate;
mod load;
mod output;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use selbias::rng::DEFAULT_SEED;
use selbias::weights::MembershipMethod;

use config::{config_hash, RunConfig, SimulateConfig};
use error::CliError;
use output::{Meta, OutputDir};

#[derive(Debug, Parser)]
#[command(name = "selbias", version, about = "Selection-bias correction with propensity weights")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Where outputs go; overrides the config file (default: current directory).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Covariate summaries and standardized differences before and after weighting.
    Balance {
        #[arg(long)]
        config: PathBuf,
    },
    /// Weighted outcome models with their variances.
    Estimate {
        #[arg(long)]
        config: PathBuf,
    },
    /// The Monte Carlo study.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated weighting methods (logistic, cbps, eb, rf).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MembershipMethod>>,
    #[arg(long)]
    n_sims: Option<usize>,
    /// Convenience and representative sample size.
    #[arg(long)]
    n: Option<usize>,
    /// Bootstrap replicates per simulation.
    #[arg(long)]
    bootstrap: Option<usize>,
}

fn output_dir(flag: &Option<PathBuf>, file: &Option<PathBuf>) -> PathBuf {
    flag.clone().or_else(|| file.clone()).unwrap_or_else(|| PathBuf::from("."))
}

fn run_config(path: &PathBuf, g: &Global, needs_outcome: bool) -> Result<(RunConfig, Meta, PathBuf), CliError> {
    let mut cfg = RunConfig::load(path)?;
    let seed = g.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    cfg.seed = Some(seed);
    cfg.bootstrap.seed = seed;
    cfg.weights.forest.seed = seed;
    cfg.validate(needs_outcome)?;
    let dir = output_dir(&g.output_dir, &cfg.output_dir);
    // The destination does not change the results, so it is not hashed.
    cfg.output_dir = None;
    let meta = Meta::new(seed, config_hash(&cfg));
    Ok((cfg, meta, dir))
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError { kind: "UsageError".into(), message: e.to_string() })?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Balance { config } | Command::Estimate { config } => {
            let estimate = matches!(cli.command, Command::Estimate { .. });
            let (cfg, meta, dir) = run_config(config, g, estimate)?;
            let schema = load::load_schema(&cfg.schema)?;
            let rep = load::load_representative(&cfg, &schema)?;
            let mut out = OutputDir::create(&dir, meta)?;
            if estimate {
                estimate::run(&cfg, &schema, &rep, &mut out)?;
            } else {
                let conv = load::load_table(&cfg.convenience_csv, &schema, cfg.missing)?;
                balance::run(&cfg, &conv, &rep, &mut out)?;
            }
            Ok(out.written)
        }
        Command::Simulate(a) => {
            let mut cfg = match &a.config {
                Some(p) => SimulateConfig::load(p)?,
                None => SimulateConfig::default(),
            };
            let s = &mut cfg.simulation;
            if let Some(m) = &a.methods {
                s.methods = m.clone();
            }
            if let Some(n) = a.n_sims {
                s.n_sims = n;
            }
            if let Some(n) = a.n {
                s.sample_size = n;
            }
            if let Some(b) = a.bootstrap {
                s.bootstrap = b;
            }
            if let Some(seed) = g.seed {
                s.seed = seed;
            }
            s.validate().map_err(|e| CliError::config(e.to_string()))?;
            let dir = output_dir(&g.output_dir, &cfg.output_dir);
            cfg.output_dir = None;
            let meta = Meta::new(cfg.simulation.seed, config_hash(&cfg));
            let mut out = OutputDir::create(&dir, meta)?;
            simulate::run(&cfg, &mut out)?;
            Ok(out.written)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError { kind: "UsageError".into(), message: e.to_string().trim_end().to_string() };
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
